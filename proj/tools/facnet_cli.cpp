// facnet: synth | train | localize | eval | gradcheck | convert
//
// Exit status: 0 success, 1 check failed (gradcheck), 2 configuration or
// manifest error, 3 input/format/I-O error, 4 training diverged.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "facnet/diagnostics.hpp"
#include "facnet/pipeline.hpp"
#include "facnet/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace facnet::cli {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::size_t threads = 0;  // 0 = keep config value
};

RunConfig load_run_config(const GlobalOptions& g) {
  json doc = g.config_path.empty() ? json::object() : read_config_document(g.config_path);
  for (const auto& o : g.overrides) apply_override(doc, o);
  auto rc = run_config_from_json(doc);
  if (g.threads > 0) rc.train.threads = g.threads;
  rc.validate();
  return rc;
}

Dataset load_manifest_dataset(const std::string& manifest, const RunConfig& rc) {
  if (manifest.empty()) throw ConfigError("--manifest is required");
  if (!fs::exists(manifest)) throw ConfigError("manifest not found: " + manifest);
  auto d = load_dataset(parse_manifest(manifest));
  if (rc.stream_mode == StreamMode::Concat) d = concatenate_streams(d);
  return d;
}

std::size_t stream_width(const Dataset& d, std::size_t stream) {
  for (const auto& v : d.videos) {
    if (v.num_snippets() > 0) return v.streams.at(stream).cols();
  }
  throw InputError("dataset has no non-empty videos");
}

fs::path model_path(const fs::path& dir, const std::string& stream) { return dir / ("model_" + stream + ".facn"); }

std::vector<const Video*> select_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.split(Split::Train);
  if (split == "test") return d.split(Split::Test);
  if (split == "all") {
    std::vector<const Video*> out;
    for (const auto& v : d.videos) out.push_back(&v);
    return out;
  }
  throw ConfigError("--split must be train, test or all");
}

// ---------------------------------------------------------------------------

int cmd_synth(const GlobalOptions& g, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  auto rc = load_run_config(g);
  if (seed) rc.synth.seed = *seed;
  if (out_dir.empty()) throw ConfigError("--out is required");
  const auto syn = generate_synthetic(rc.synth);
  const auto manifest = write_dataset(syn.dataset, out_dir);
  const auto& d = syn.dataset;
  std::size_t instances = 0;
  for (const auto& v : d.videos) instances += v.annotations.size();
  std::printf("synthetic dataset: %zu videos (%zu train, %zu test), %zu classes, %zu stream(s), D=%zu, %zu instances\n",
              d.videos.size(), d.split(Split::Train).size(), d.split(Split::Test).size(), d.classes.size(),
              d.stream_names.size(), rc.synth.feature_dim, instances);
  std::printf("manifest: %s\n", manifest.string().c_str());
  return 0;
}

template <typename T>
void train_stream(const Dataset& d, std::size_t stream, const RunConfig& rc, const fs::path& out, bool resume) {
  const auto& name = d.stream_names[stream];
  ModelConfig mc = rc.model;
  mc.num_classes = d.classes.size();
  mc.feature_dim = stream_width(d, stream);
  FitOptions opts;
  opts.checkpoint = model_path(out, name);
  opts.history = out / ("history_" + name + ".csv");
  opts.state = out / ("state_" + name + ".facs");
  opts.resume = resume;
  const auto start = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const EpochReport& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] epoch %3zu/%zu  l_cw %.4f  l_ca %.4f  l_mil %.4f  total %.4f  (%zu videos, %.1fs)\n",
                name.c_str(), r.epoch, rc.train.epochs, r.cw, r.ca, r.mil, r.total, r.videos, secs);
    if (r.skipped) std::fprintf(stderr, "warning: skipped %zu empty video(s) in epoch %zu\n", r.skipped, r.epoch);
    std::fflush(stdout);
  };
  fit<T>(training_samples(d, stream), mc, rc.train, rc.loss, opts);
  std::printf("[%s] checkpoint: %s\n", name.c_str(), opts.checkpoint->string().c_str());
}

json effective_config(const RunConfig& rc) {
  json j;
  j["schema_version"] = kRunConfigSchemaVersion;
  j["model"] = {{"embed_dims", rc.model.embed_dims},     {"kernel_size", rc.model.kernel_size},
                {"delta", rc.model.delta},               {"temperatures", rc.model.temperatures},
                {"use_background", rc.model.use_background}, {"dropout_rate", rc.model.dropout_rate}};
  j["train"] = {{"learning_rate", rc.train.learning_rate},
                {"epochs", rc.train.epochs},
                {"batch_size", rc.train.batch_size},
                {"beta1", rc.train.beta1},
                {"beta2", rc.train.beta2},
                {"adam_eps", rc.train.adam_eps},
                {"seed", rc.train.seed},
                {"max_snippets", rc.train.max_snippets ? json(*rc.train.max_snippets) : json(nullptr)},
                {"precision", rc.train.precision == Precision::F64 ? "f64" : "f32"},
                {"checkpoint_interval", rc.train.checkpoint_interval},
                {"stream_mode", rc.stream_mode == StreamMode::Concat ? "concat" : "separate"}};
  j["loss"] = {{"cw", rc.loss.cw}, {"ca", rc.loss.ca}, {"mil", rc.loss.mil}};
  j["localize"] = {{"class_reject_threshold", rc.localize.class_reject_threshold},
                   {"thresholds", rc.localize.thresholds},
                   {"nms_tiou", rc.localize.nms_tiou},
                   {"fusion_weight", rc.localize.fusion_weight},
                   {"oic_context_ratio", rc.localize.oic_context_ratio},
                   {"include_class_conf", rc.localize.include_class_conf}};
  return j;
}

int cmd_train(const GlobalOptions& g, const std::string& manifest, const std::string& out_dir, bool resume) {
  const auto rc = load_run_config(g);
  const auto d = load_manifest_dataset(manifest, rc);
  if (d.split(Split::Train).empty()) throw ConfigError("manifest has no training videos");
  const fs::path out = out_dir;
  fs::create_directories(out);
  std::ofstream(out / "config.json") << effective_config(rc).dump(2) << '\n';
  for (std::size_t s = 0; s < d.stream_names.size(); ++s) {
    if (rc.train.precision == Precision::F64) {
      train_stream<double>(d, s, rc, out, resume);
    } else {
      train_stream<float>(d, s, rc, out, resume);
    }
  }
  return 0;
}

void write_detections_csv(const fs::path& path, const std::vector<Detection>& dets, const std::vector<std::string>& classes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "video_id,label,t_start,t_end,score\n";
  out.precision(10);
  for (const auto& d : dets) {
    out << d.video_id << ',' << classes.at(d.instance.class_id) << ',' << d.instance.t_start << ','
        << d.instance.t_end << ',' << d.instance.confidence << '\n';
  }
}

json detections_json(const std::vector<Detection>& dets, const std::vector<const Video*>& videos,
                     const std::vector<std::string>& classes) {
  json results = json::object();
  for (const auto* v : videos) results[v->id] = json::array();
  for (const auto& d : dets) {
    results[d.video_id].push_back({{"label", classes.at(d.instance.class_id)},
                                   {"score", d.instance.confidence},
                                   {"segment", {d.instance.t_start, d.instance.t_end}}});
  }
  return {{"results", results}};
}

void write_score_dump(const fs::path& path, const StreamScores& s, const std::vector<std::string>& classes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "t,S_f";
  for (std::size_t c = 0; c < s.s_a.cols(); ++c) out << ",S_a_" << (c < classes.size() ? classes[c] : "background");
  out << '\n';
  out.precision(8);
  for (std::size_t t = 0; t < s.s_a.rows(); ++t) {
    out << static_cast<double>(t * s.snippet_stride) / s.fps << ',' << s.s_f(t, 0);
    for (std::size_t c = 0; c < s.s_a.cols(); ++c) out << ',' << s.s_a(t, c);
    out << '\n';
  }
}

struct LocalizeArgs {
  std::string manifest;
  std::string models;
  std::string split = "test";
  std::string out = "detections.csv";
  std::string json_out;
  std::string scores_dir;
  bool untrained = false;
};

int cmd_localize(const GlobalOptions& g, const LocalizeArgs& a) {
  const auto rc = load_run_config(g);
  const auto d = load_manifest_dataset(a.manifest, rc);
  if (a.models.empty() && !a.untrained) throw ConfigError("--models is required (or --untrained)");

  std::vector<StreamModel<double>> models;
  for (std::size_t s = 0; s < d.stream_names.size(); ++s) {
    if (a.untrained) {
      ModelConfig mc = rc.model;
      mc.num_classes = d.classes.size();
      mc.feature_dim = stream_width(d, s);
      models.push_back({mc, init_params<double>(mc, mix_seed(rc.train.seed, 0x1a17ULL))});
      continue;
    }
    const auto path = model_path(a.models, d.stream_names[s]);
    if (!fs::exists(path)) throw ConfigError("no checkpoint for stream '" + d.stream_names[s] + "': " + path.string());
    auto ck = load_checkpoint(path);
    if (ck.config.num_classes != d.classes.size()) {
      throw ConfigError(path.string() + ": model has " + std::to_string(ck.config.num_classes) +
                        " classes, manifest declares " + std::to_string(d.classes.size()));
    }
    if (ck.config.feature_dim != stream_width(d, s)) {
      throw ConfigError(path.string() + ": model expects feature width " + std::to_string(ck.config.feature_dim));
    }
    models.push_back({ck.config, ck.params.cast<double>()});
  }

  const auto videos = select_split(d, a.split);
  if (!a.scores_dir.empty()) fs::create_directories(a.scores_dir);
  std::vector<Detection> dets;
  for (const auto* v : videos) {
    if (v->num_snippets() == 0) {
      std::fprintf(stderr, "warning: %s has no snippets, skipped\n", v->id.c_str());
      continue;
    }
    const auto streams = score_video(*v, models);
    if (!a.scores_dir.empty()) {
      for (std::size_t s = 0; s < streams.size(); ++s) {
        write_score_dump(fs::path(a.scores_dir) / (v->id + "_" + d.stream_names[s] + ".csv"), streams[s], d.classes);
      }
    }
    for (const auto& inst : localize_video(streams, d.classes.size(), rc.localize)) dets.push_back({v->id, inst});
  }

  const fs::path csv = a.out;
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  write_detections_csv(csv, dets, d.classes);
  const fs::path json_path = a.json_out.empty() ? fs::path(csv).replace_extension(".json") : fs::path(a.json_out);
  std::ofstream(json_path) << detections_json(dets, videos, d.classes).dump(2) << '\n';
  std::printf("%zu detections over %zu videos -> %s, %s\n", dets.size(), videos.size(), csv.string().c_str(),
              json_path.string().c_str());
  return 0;
}

std::vector<Detection> read_detections(const fs::path& path, const std::vector<std::string>& classes) {
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < classes.size(); ++c) index[classes[c]] = c;
  auto class_of = [&](const std::string& label, const std::string& where) {
    auto it = index.find(label);
    if (it == index.end()) throw ValidationError(ValidationError::Kind::UnknownClass, where + ": unknown class '" + label + "'");
    return it->second;
  };
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections " + path.string());
  std::vector<Detection> out;
  if (path.extension() == ".json") {
    json doc;
    try {
      doc = json::parse(in);
      for (const auto& [vid, list] : doc.at("results").items()) {
        for (const auto& e : list) {
          const auto seg = e.at("segment").get<std::vector<double>>();
          if (seg.size() != 2) throw InputError(path.string() + ": segment must have two entries");
          out.push_back({vid, {class_of(e.at("label").get<std::string>(), path.string()), e.at("score").get<double>(),
                               seg[0], seg[1]}});
        }
      }
    } catch (const json::exception& e) {
      throw InputError(path.string() + ": " + e.what());
    }
    return out;
  }
  std::string line;
  std::getline(in, line);
  if (line.rfind("video_id,label,t_start,t_end,score", 0) != 0) {
    throw InputError(path.string() + ": expected header video_id,label,t_start,t_end,score");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 5) throw InputError(where + ": expected 5 fields");
    try {
      out.push_back({f[0], {class_of(f[1], where), std::stod(f[4]), std::stod(f[2]), std::stod(f[3])}});
    } catch (const std::logic_error&) {
      throw InputError(where + ": malformed number");
    }
  }
  return out;
}

int cmd_eval(const GlobalOptions& g, const std::string& detections, const std::string& manifest,
             const std::string& split, const std::string& grid_name, const std::string& report) {
  const auto rc = load_run_config(g);
  const auto d = load_manifest_dataset(manifest, rc);
  if (detections.empty()) throw ConfigError("--detections is required");
  std::vector<double> grid;
  if (grid_name == "thumos") {
    grid = thumos_grid();
  } else if (grid_name == "activitynet") {
    grid = activitynet_grid();
  } else {
    throw ConfigError("--grid must be thumos or activitynet");
  }
  std::vector<GroundTruthInstance> gt;
  for (const auto* v : select_split(d, split)) gt.insert(gt.end(), v->annotations.begin(), v->annotations.end());
  const auto r = map_report(read_detections(detections, d.classes), gt, grid, d.classes.size());
  std::cout << r.table(d.classes);
  if (!report.empty()) std::ofstream(report) << r.to_json(d.classes).dump(2) << '\n';
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, std::size_t instances, std::uint64_t seed, const std::string& fault_name,
                  double tolerance) {
  const auto rc = load_run_config(g);
  const auto fault = parse_fault(fault_name);
  if (instances == 0) throw ConfigError("--instances must be >= 1");
  Rng rng(seed);
  double worst = 0;
  std::string worst_desc = "none";
  bool ok = true;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = random_tiny_instance(rng);
    const auto r = check_instance(inst, rc.loss, fault);
    const auto& c = inst.config;
    std::printf("instance %2zu  T=%zu C=%zu D=%zu bg=%d  max rel error %.3e  worst %s[%zu]%s\n", i, inst.x.rows(),
                c.num_classes, c.feature_dim, c.use_background ? 1 : 0, r.max_rel_error, r.worst_name.c_str(),
                r.worst_index, r.eval_failed ? "  (non-finite objective)" : "");
    if (!r.passed(tolerance)) ok = false;
    if (r.max_rel_error >= worst || r.eval_failed) {
      worst = r.max_rel_error;
      worst_desc = r.worst_name + "[" + std::to_string(r.worst_index) + "]";
    }
  }
  std::printf("gradcheck %s: max relative error %.3e (tolerance %.1e), worst parameter %s%s\n", ok ? "PASS" : "FAIL",
              worst, tolerance, worst_desc.c_str(),
              fault ? (std::string(", injected fault in ") + op_name(*fault)).c_str() : "");
  if (!ok) std::fprintf(stderr, "gradcheck failed: worst parameter %s\n", worst_desc.c_str());
  return ok ? 0 : 1;
}

int cmd_convert(const std::string& input, std::size_t steps, std::size_t dim, const std::string& output) {
  const auto x = convert_raw_features(input, steps, dim, output);
  std::printf("wrote %zux%zu features to %s\n", x.rows(), x.cols(), output.c_str());
  return 0;
}

}  // namespace facnet::cli

int main(int argc, char** argv) {
  using namespace facnet::cli;
  CLI::App app{"Weakly-supervised temporal action localization on precomputed snippet features"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON run configuration file");
  app.add_option("--set", g.overrides, "Override a config value, e.g. --set train.epochs=3 (repeatable)");
  app.add_option("--threads", g.threads, "Worker threads for per-video training work");

  std::string out_dir, manifest;
  std::optional<std::uint64_t> seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (manifest + feature files)");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Override synth.seed");

  std::string train_out = "run";
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train one model per stream; writes checkpoints and loss history");
  train->add_option("--manifest", manifest, "Dataset manifest (JSON)");
  train->add_option("--out", train_out, "Output directory for model_<stream>.facn, history and state")->capture_default_str();
  train->add_flag("--resume", resume, "Continue from the saved training state in --out");

  LocalizeArgs la;
  auto* localize = app.add_subcommand("localize", "Localize actions with trained models");
  localize->add_option("--manifest", la.manifest, "Dataset manifest (JSON)");
  localize->add_option("--models", la.models, "Directory holding model_<stream>.facn checkpoints");
  localize->add_option("--split", la.split, "Videos to process: test, train or all")->capture_default_str();
  localize->add_option("--out", la.out, "Detections CSV (video_id,label,t_start,t_end,score)")->capture_default_str();
  localize->add_option("--json", la.json_out, "Structured detections file (default: CSV path with .json)");
  localize->add_option("--scores-dir", la.scores_dir, "Write per-video score dumps (t,S_f,S_a_*) here");
  localize->add_flag("--untrained", la.untrained, "Use freshly initialised weights instead of checkpoints");

  std::string detections, split = "test", grid = "thumos", report;
  auto* eval = app.add_subcommand("eval", "Compute mAP of a detections file against the manifest ground truth");
  eval->add_option("--detections", detections, "Detections file (.csv or .json)");
  eval->add_option("--manifest", manifest, "Dataset manifest (JSON)");
  eval->add_option("--split", split, "Ground-truth split: test, train or all")->capture_default_str();
  eval->add_option("--grid", grid, "tIoU grid: thumos (0.1:0.1:0.7) or activitynet (0.5:0.05:0.95)")->capture_default_str();
  eval->add_option("--report", report, "Write the report as JSON");

  std::size_t instances = 20;
  std::uint64_t gc_seed = 0;
  std::string fault;
  double tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all parameter gradients (64-bit)");
  gradcheck->add_option("--instances", instances, "Random tiny instances")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Instance seed")->capture_default_str();
  gradcheck->add_option("--inject-fault", fault,
                        "Corrupt one backward rule: conv, mask, relu, cosine, softmax, matmul_tn, column_dot, "
                        "combine, sum, nce");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  std::string input, output;
  std::size_t steps = 0, dim = 0;
  auto* convert = app.add_subcommand("convert", "Wrap a raw float32 T x D blob into a feature file");
  convert->add_option("--input", input, "Headerless little-endian float32 file")->required();
  convert->add_option("--steps", steps, "T (snippets)")->required();
  convert->add_option("--dim", dim, "D (feature width)")->required();
  convert->add_option("--output", output, "Feature file to write")->required();

  for (auto* sub : {synth, train, localize, eval, gradcheck, convert}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(g, out_dir, seed);
    if (*train) return cmd_train(g, manifest, train_out, resume);
    if (*localize) return cmd_localize(g, la);
    if (*eval) return cmd_eval(g, detections, manifest, split, grid, report);
    if (*gradcheck) return cmd_gradcheck(g, instances, gc_seed, fault, tolerance);
    if (*convert) return cmd_convert(input, steps, dim, output);
  } catch (const facnet::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const facnet::ValidationError& e) {
    std::cerr << "manifest error: " << e.what() << '\n';
    return 2;
  } catch (const facnet::TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
