#pragma once

// Feature files, dataset manifests and the synthetic dataset generator.
//
// Feature file layout (little-endian):
//   "FACF" | u32 version | u32 T | u32 D | T*D float32, row-major
//
// Manifest: a JSON document
//   {
//     "schema_version": 1,
//     "classes": ["name", ...],
//     "streams": ["rgb"] or ["rgb", "flow"],
//     "videos": [{
//        "id": "video_0001", "split": "train" | "test",
//        "fps": 25.0, "snippet_stride": 16,
//        "features": {"rgb": "relative/or/absolute.facf", ...},
//        "labels": ["name", ...],                         // optional, defaults to annotated classes
//        "annotations": [{"label": "name", "segment": [t_s, t_e]}, ...]   // optional
//     }, ...]
//   }
// Relative feature paths resolve against the manifest's directory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "facnet/binary_io.hpp"
#include "facnet/detection.hpp"
#include "facnet/losses.hpp"
#include "facnet/random.hpp"

namespace facnet {

inline constexpr std::array<char, 4> kFeatureMagic{'F', 'A', 'C', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Feature files

inline binary::Writer encode_features(const Matrix<float>& x) {
  binary::Writer w;
  w.bytes(kFeatureMagic.data(), 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(x.rows()));
  w.u32(static_cast<std::uint32_t>(x.cols()));
  for (float v : x.storage()) w.f32(v);
  return w;
}

inline void save_features(const std::filesystem::path& path, const Matrix<float>& x) {
  if (!x.all_finite()) throw InputError("save_features: non-finite values for " + path.string());
  encode_features(x).save(path);
}

struct FeatureHeader {
  std::uint32_t version = 0;
  std::size_t steps = 0;
  std::size_t dim = 0;
};

inline FeatureHeader read_feature_header(binary::Reader& r) {
  if (r.magic() != kFeatureMagic) throw FormatError(r.prefix() + "bad magic, expected FACF", 0);
  FeatureHeader h;
  h.version = r.u32();
  if (h.version != kFeatureVersion) {
    throw FormatError(r.prefix() + "unsupported feature file version " + std::to_string(h.version), 4);
  }
  h.steps = r.u32();
  h.dim = r.u32();
  return h;
}

inline Matrix<float> decode_features(binary::Reader r) {
  const auto h = read_feature_header(r);
  const std::size_t expected = 4 * h.steps * h.dim;
  if (r.remaining() != expected) {
    throw FormatError(r.prefix() + "payload length mismatch: expected " + std::to_string(expected) +
                          " bytes for " + std::to_string(h.steps) + "x" + std::to_string(h.dim) + ", found " +
                          std::to_string(r.remaining()),
                      r.offset());
  }
  Matrix<float> x(h.steps, h.dim);
  for (auto& v : x.storage()) {
    const std::size_t at = r.offset();
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(r.prefix() + "non-finite feature value", at);
  }
  return x;
}

inline Matrix<float> load_features(const std::filesystem::path& path) {
  return decode_features(binary::Reader::from_file(path));
}

inline FeatureHeader peek_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> head(16);
  in.read(reinterpret_cast<char*>(head.data()), 16);
  head.resize(static_cast<std::size_t>(in.gcount()));
  binary::Reader r(std::move(head), path.string());
  return read_feature_header(r);
}

/// Wraps a headerless float32 blob of T×D values (little-endian) into a feature file.
inline Matrix<float> convert_raw_features(const std::filesystem::path& input, std::size_t steps, std::size_t dim,
                                          const std::filesystem::path& output) {
  if (steps == 0 || dim == 0) throw InputError("convert: T and D must be >= 1");
  auto raw = binary::Reader::from_file(input);
  if (raw.size() != 4 * steps * dim) {
    throw FormatError(raw.prefix() + "raw blob has " + std::to_string(raw.size()) + " bytes, expected " +
                          std::to_string(4 * steps * dim),
                      0);
  }
  Matrix<float> x(steps, dim);
  for (auto& v : x.storage()) {
    const std::size_t at = raw.offset();
    v = raw.f32();
    if (!std::isfinite(v)) throw FormatError(raw.prefix() + "non-finite value", at);
  }
  save_features(output, x);
  return x;
}

// ---------------------------------------------------------------------------
// In-memory dataset

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct Video {
  std::string id;
  Split split = Split::Train;
  double fps = 25.0;
  std::size_t snippet_stride = 16;
  std::vector<Matrix<float>> streams;  // one T×D matrix per stream
  LabelVector labels;
  std::vector<GroundTruthInstance> annotations;

  std::size_t num_snippets() const { return streams.empty() ? 0 : streams.front().rows(); }
  double duration() const { return static_cast<double>(num_snippets() * snippet_stride) / fps; }
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<std::string> stream_names{"rgb"};
  std::vector<Video> videos;

  bool dual_stream() const { return stream_names.size() == 2; }

  std::vector<const Video*> split(Split s) const {
    std::vector<const Video*> out;
    for (const auto& v : videos) {
      if (v.split == s) out.push_back(&v);
    }
    return out;
  }

  std::vector<GroundTruthInstance> ground_truth(Split s) const {
    std::vector<GroundTruthInstance> out;
    for (const auto* v : split(s)) out.insert(out.end(), v->annotations.begin(), v->annotations.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestVideo {
  std::string id;
  Split split = Split::Train;
  double fps = 25.0;
  std::size_t snippet_stride = 16;
  std::vector<std::filesystem::path> feature_paths;  // resolved, one per stream
  std::size_t num_snippets = 0;
  LabelVector labels;
  std::vector<GroundTruthInstance> annotations;

  double duration() const { return static_cast<double>(num_snippets * snippet_stride) / fps; }
};

struct Manifest {
  std::vector<std::string> classes;
  std::vector<std::string> streams;
  std::vector<ManifestVideo> videos;

  bool dual_stream() const { return streams.size() == 2; }
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(ValidationError::Kind::Schema, where + ": missing key '" + key + "'");
  }
  return obj.at(key);
}

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ValidationError(ValidationError::Kind::Schema, where + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace detail

inline Manifest parse_manifest_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  using Kind = ValidationError::Kind;
  try {
    detail::reject_unknown_keys(doc, {"schema_version", "classes", "streams", "videos"}, "manifest");
    const int version = detail::require_key(doc, "schema_version", "manifest").get<int>();
    if (version != kManifestSchemaVersion) {
      throw ValidationError(Kind::Schema, "manifest: unsupported schema_version " + std::to_string(version));
    }
    Manifest m;
    m.classes = detail::require_key(doc, "classes", "manifest").get<std::vector<std::string>>();
    if (m.classes.empty()) throw ValidationError(Kind::Schema, "manifest: empty class list");
    std::map<std::string, std::size_t> class_index;
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
      if (!class_index.emplace(m.classes[i], i).second) {
        throw ValidationError(Kind::Schema, "manifest: duplicate class '" + m.classes[i] + "'");
      }
    }
    m.streams = doc.contains("streams") ? doc.at("streams").get<std::vector<std::string>>()
                                        : std::vector<std::string>{"rgb"};
    if (m.streams.empty() || m.streams.size() > 2) {
      throw ValidationError(Kind::Schema, "manifest: expected 1 or 2 streams");
    }

    auto lookup = [&](const std::string& name, const std::string& where) {
      auto it = class_index.find(name);
      if (it == class_index.end()) throw ValidationError(Kind::UnknownClass, where + ": unknown class '" + name + "'");
      return it->second;
    };

    std::set<std::string> seen_ids;
    for (const auto& jv : detail::require_key(doc, "videos", "manifest")) {
      ManifestVideo v;
      v.id = detail::require_key(jv, "id", "video").get<std::string>();
      const std::string where = "video '" + v.id + "'";
      detail::reject_unknown_keys(jv, {"id", "split", "fps", "snippet_stride", "features", "labels", "annotations"},
                                  where);
      if (!seen_ids.insert(v.id).second) throw ValidationError(Kind::Schema, where + ": duplicate id");
      const auto split = jv.value("split", std::string("train"));
      if (split != "train" && split != "test") throw ValidationError(Kind::Schema, where + ": bad split '" + split + "'");
      v.split = split == "train" ? Split::Train : Split::Test;
      v.fps = detail::require_key(jv, "fps", where).get<double>();
      v.snippet_stride = detail::require_key(jv, "snippet_stride", where).get<std::size_t>();
      if (!(v.fps > 0) || v.snippet_stride == 0) throw ValidationError(Kind::Schema, where + ": fps and stride must be > 0");

      const auto& feats = detail::require_key(jv, "features", where);
      for (const auto& stream : m.streams) {
        if (!feats.contains(stream)) throw ValidationError(Kind::Schema, where + ": no features for stream " + stream);
        std::filesystem::path p = feats.at(stream).get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        if (!std::filesystem::exists(p)) {
          throw ValidationError(Kind::MissingFeatureFile, where + ": feature file not found: " + p.string());
        }
        const auto header = peek_feature_header(p);
        if (!v.feature_paths.empty() && header.steps != v.num_snippets) {
          throw ValidationError(Kind::Schema, where + ": streams disagree on snippet count");
        }
        v.num_snippets = header.steps;
        v.feature_paths.push_back(p);
      }

      std::vector<std::uint8_t> y(m.classes.size(), 0);
      if (jv.contains("annotations")) {
        for (const auto& ja : jv.at("annotations")) {
          GroundTruthInstance gt;
          gt.video_id = v.id;
          gt.class_id = lookup(detail::require_key(ja, "label", where).get<std::string>(), where);
          const auto seg = detail::require_key(ja, "segment", where).get<std::vector<double>>();
          if (seg.size() != 2) throw ValidationError(Kind::Schema, where + ": segment must have two entries");
          gt.t_start = seg[0];
          gt.t_end = seg[1];
          if (!(gt.t_start >= 0 && gt.t_start < gt.t_end) || gt.t_end > v.duration() + 1e-9) {
            throw ValidationError(Kind::SegmentOutOfRange,
                                  where + ": segment [" + std::to_string(gt.t_start) + ", " + std::to_string(gt.t_end) +
                                      "] outside video duration " + std::to_string(v.duration()));
          }
          y[gt.class_id] = 1;
          v.annotations.push_back(gt);
        }
      }
      if (jv.contains("labels")) {
        std::fill(y.begin(), y.end(), 0);
        for (const auto& name : jv.at("labels").get<std::vector<std::string>>()) y[lookup(name, where)] = 1;
        for (const auto& gt : v.annotations) {
          if (!y[gt.class_id]) throw ValidationError(Kind::Schema, where + ": annotated class missing from labels");
        }
      }
      v.labels = LabelVector(std::move(y));
      if (v.split == Split::Train && v.labels.positives() == 0) {
        throw ValidationError(Kind::Schema, where + ": training video has no labels");
      }
      m.videos.push_back(std::move(v));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(Kind::Schema, std::string("manifest: ") + e.what());
  }
}

inline Manifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(ValidationError::Kind::Schema, path.string() + ": " + e.what());
  }
  return parse_manifest_json(doc, path.parent_path());
}

inline Dataset load_dataset(const Manifest& m) {
  Dataset d;
  d.classes = m.classes;
  d.stream_names = m.streams;
  for (const auto& mv : m.videos) {
    Video v;
    v.id = mv.id;
    v.split = mv.split;
    v.fps = mv.fps;
    v.snippet_stride = mv.snippet_stride;
    v.labels = mv.labels;
    v.annotations = mv.annotations;
    for (const auto& p : mv.feature_paths) v.streams.push_back(load_features(p));
    d.videos.push_back(std::move(v));
  }
  return d;
}

/// Writes one feature file per (video, stream) under `dir/features` and
/// `dir/manifest.json`. Returns the manifest path.
inline std::filesystem::path write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  nlohmann::json doc;
  doc["schema_version"] = kManifestSchemaVersion;
  doc["classes"] = d.classes;
  doc["streams"] = d.stream_names;
  doc["videos"] = nlohmann::json::array();
  for (const auto& v : d.videos) {
    nlohmann::json jv;
    jv["id"] = v.id;
    jv["split"] = split_name(v.split);
    jv["fps"] = v.fps;
    jv["snippet_stride"] = v.snippet_stride;
    nlohmann::json feats = nlohmann::json::object();
    for (std::size_t s = 0; s < d.stream_names.size(); ++s) {
      const fs::path rel = fs::path("features") / (v.id + "_" + d.stream_names[s] + ".facf");
      save_features(dir / rel, v.streams.at(s));
      feats[d.stream_names[s]] = rel.generic_string();
    }
    jv["features"] = feats;
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < v.labels.size(); ++c) {
      if (v.labels[c]) labels.push_back(d.classes[c]);
    }
    jv["labels"] = labels;
    jv["annotations"] = nlohmann::json::array();
    for (const auto& gt : v.annotations) {
      jv["annotations"].push_back({{"label", d.classes[gt.class_id]}, {"segment", {gt.t_start, gt.t_end}}});
    }
    doc["videos"].push_back(jv);
  }
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t num_train = 40;
  std::size_t num_test = 20;
  std::size_t feature_dim = 64;
  std::size_t num_streams = 1;
  std::size_t min_snippets = 60;
  std::size_t max_snippets = 200;
  std::size_t min_instances = 1;
  std::size_t max_instances = 4;
  std::size_t min_instance_length = 6;   // snippets
  std::size_t max_instance_length = 30;  // snippets
  double margin = 0.3;
  double noise = 0.1;
  double fps = 25.0;
  std::size_t snippet_stride = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes == 0) throw ConfigError("synth.num_classes must be >= 1");
    if (num_train + num_test == 0) throw ConfigError("synth: no videos requested");
    if (feature_dim == 0) throw ConfigError("synth.feature_dim must be >= 1");
    if (num_streams != 1 && num_streams != 2) throw ConfigError("synth.num_streams must be 1 or 2");
    if (min_snippets == 0 || min_snippets > max_snippets) throw ConfigError("synth: bad snippet range");
    if (min_instances == 0 || min_instances > max_instances) throw ConfigError("synth: bad instance count range");
    if (min_instance_length == 0 || min_instance_length > max_instance_length) {
      throw ConfigError("synth: bad instance length range");
    }
    if (max_instance_length + 2 > min_snippets) throw ConfigError("synth: instances longer than the shortest video");
    if (!(margin > 0)) throw ConfigError("synth.margin must be > 0");
    if (!(noise >= 0)) throw ConfigError("synth.noise must be >= 0");
    if (!(fps > 0) || snippet_stride == 0) throw ConfigError("synth: fps and snippet_stride must be > 0");
  }
};

/// Unit-norm prototypes (one per action class, then background) with pairwise
/// cosine similarity at most 1 - margin. Rejection sampling; throws ConfigError
/// when the margin cannot be met.
inline Matrix<double> draw_prototypes(std::size_t count, std::size_t dim, double margin, Rng& rng) {
  // n unit vectors cannot all have pairwise cosine below -1/(n-1).
  if (count > 1 && 1.0 - margin < -1.0 / static_cast<double>(count - 1) - 1e-12) {
    throw ConfigError("synth: margin " + std::to_string(margin) + " infeasible for " + std::to_string(count) +
                      " prototypes");
  }
  constexpr int kAttempts = 20000;
  Matrix<double> protos(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      double norm = 0;
      for (auto& v : protos.row(i)) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm == 0) continue;
      for (auto& v : protos.row(i)) v /= norm;
      placed = true;
      for (std::size_t j = 0; j < i && placed; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < dim; ++k) dot += protos(i, k) * protos(j, k);
        placed = dot <= 1.0 - margin;
      }
    }
    if (!placed) {
      throw ConfigError("synth: could not place " + std::to_string(count) + " prototypes in dimension " +
                        std::to_string(dim) + " with margin " + std::to_string(margin));
    }
  }
  return protos;
}

struct SyntheticDataset {
  Dataset dataset;
  std::vector<Matrix<double>> prototypes;  // per stream: (C+1) × D, background last
};

inline SyntheticDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticDataset out;
  Dataset& d = out.dataset;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) d.classes.push_back("action_" + std::to_string(c));
  d.stream_names = cfg.num_streams == 2 ? std::vector<std::string>{"rgb", "flow"} : std::vector<std::string>{"rgb"};
  for (std::size_t s = 0; s < cfg.num_streams; ++s) {
    out.prototypes.push_back(draw_prototypes(cfg.num_classes + 1, cfg.feature_dim, cfg.margin, rng));
  }
  const double seconds_per_snippet = static_cast<double>(cfg.snippet_stride) / cfg.fps;

  const std::size_t total = cfg.num_train + cfg.num_test;
  for (std::size_t vi = 0; vi < total; ++vi) {
    Video v;
    char id[32];
    std::snprintf(id, sizeof id, "video_%04zu", vi);
    v.id = id;
    v.split = vi < cfg.num_train ? Split::Train : Split::Test;
    v.fps = cfg.fps;
    v.snippet_stride = cfg.snippet_stride;
    const auto steps = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.min_snippets), static_cast<std::int64_t>(cfg.max_snippets)));

    // Place non-overlapping segments with at least one background snippet between them.
    const auto wanted = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.min_instances), static_cast<std::int64_t>(cfg.max_instances)));
    std::vector<std::size_t> owner(steps, cfg.num_classes);  // num_classes marks background
    struct Segment {
      std::size_t cls, begin, end;
    };
    std::vector<Segment> segments;
    for (int attempt = 0; attempt < 200 && segments.size() < wanted; ++attempt) {
      const auto len = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(cfg.min_instance_length),
                                                            static_cast<std::int64_t>(cfg.max_instance_length)));
      const auto begin = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(steps - len - 1)));
      const auto cls = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(cfg.num_classes) - 1));
      bool free = true;
      for (std::size_t t = begin - 1; t < begin + len + 1 && free; ++t) free = owner[t] == cfg.num_classes;
      if (!free) continue;
      for (std::size_t t = begin; t < begin + len; ++t) owner[t] = cls;
      segments.push_back({cls, begin, begin + len});
    }
    std::sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.begin < b.begin; });

    std::vector<std::uint8_t> y(cfg.num_classes, 0);
    for (const auto& s : segments) {
      y[s.cls] = 1;
      v.annotations.push_back({v.id, s.cls, static_cast<double>(s.begin) * seconds_per_snippet,
                               static_cast<double>(s.end) * seconds_per_snippet});
    }
    v.labels = LabelVector(std::move(y));

    for (std::size_t s = 0; s < cfg.num_streams; ++s) {
      Matrix<float> x(steps, cfg.feature_dim);
      for (std::size_t t = 0; t < steps; ++t) {
        auto proto = out.prototypes[s].row(owner[t]);
        for (std::size_t k = 0; k < cfg.feature_dim; ++k) {
          x(t, k) = static_cast<float>(proto[k] + cfg.noise * rng.normal());
        }
      }
      v.streams.push_back(std::move(x));
    }
    d.videos.push_back(std::move(v));
  }
  return out;
}

}  // namespace facnet
