#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "facnet/checkpoint.hpp"
#include "facnet/data.hpp"
#include "facnet/losses.hpp"

namespace facnet {

enum class Precision { F32, F64 };

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_snippets;  // random contiguous crop when longer
  Precision precision = Precision::F32;
  std::size_t threads = 1;
  std::size_t checkpoint_interval = 0;  // epochs between checkpoints; 0 = final only

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train: Adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
    if (max_snippets && *max_snippets == 0) throw ConfigError("train.max_snippets must be >= 1");
    if (threads < 1) throw ConfigError("train.threads must be >= 1");
  }
};

template <typename T>
struct OptimizerState {
  std::vector<Matrix<T>> first;
  std::vector<Matrix<T>> second;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ModelParams<T>& p) {
    OptimizerState s;
    for (const auto* m : p.tensors()) {
      s.first.emplace_back(m->rows(), m->cols());
      s.second.emplace_back(m->rows(), m->cols());
    }
    return s;
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Bias-corrected Adam. All gradients are checked for finiteness before any
/// parameter changes.
template <typename T>
void adam_step(ModelParams<T>& params, const std::vector<Matrix<T>>& grads, OptimizerState<T>& state,
               const TrainConfig& cfg) {
  auto ts = params.tensors();
  if (grads.size() != ts.size() || state.first.size() != ts.size()) throw ContractError("adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    ts[i]->require_same_shape(grads[i], "adam_step");
    if (!grads[i].all_finite()) throw TrainingError(std::string("non-finite gradient for parameter ") + kParamNames[i]);
  }
  state.step += 1;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_eps);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto& p = ts[i]->storage();
    auto& m = state.first[i].storage();
    auto& v = state.second[i].storage();
    const auto& g = grads[i].storage();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

template <typename T>
struct VideoGradient {
  LossBreakdown loss;
  std::vector<Matrix<T>> grads;
};

/// Forward + backward of the total loss for one video.
template <typename T>
VideoGradient<T> video_gradient(const Matrix<T>& x_raw, const LabelVector& y, const ModelParams<T>& params,
                                const ModelConfig& mc, const LossWeights& weights, bool train_mode,
                                std::uint64_t dropout_seed) {
  Tape<T> tape;
  const auto nodes = build_forward(tape, x_raw, params, mc, train_mode, dropout_seed);
  const auto loss = append_total_loss(tape, nodes, y, weights, mc.use_background);
  const auto adj = tape.backward(loss.total);
  VideoGradient<T> out;
  out.loss = {static_cast<double>(tape.value(loss.cw)[0]), static_cast<double>(tape.value(loss.ca)[0]),
              static_cast<double>(tape.value(loss.mil)[0]), static_cast<double>(tape.value(loss.total)[0])};
  for (std::size_t i = 0; i < nodes.params.size(); ++i) {
    const auto& g = adj[nodes.params[i]];
    const auto* p = params.tensors()[i];
    out.grads.push_back(g.empty() ? Matrix<T>(p->rows(), p->cols()) : g);
  }
  return out;
}

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double cw = 0;
  double ca = 0;
  double mil = 0;
  double total = 0;
  std::size_t videos = 0;
  std::size_t skipped = 0;  // zero-snippet videos
  std::size_t steps = 0;
};

/// Training view of one video: the stream to learn from plus labels.
struct TrainSample {
  const Matrix<float>* features = nullptr;
  LabelVector labels;
};

inline std::vector<TrainSample> training_samples(const Dataset& d, std::size_t stream) {
  if (stream >= d.stream_names.size()) throw ContractError("training_samples: stream index out of range");
  std::vector<TrainSample> out;
  for (const auto* v : d.split(Split::Train)) out.push_back({&v->streams.at(stream), v->labels});
  return out;
}

namespace detail {

template <typename T>
Matrix<T> crop_rows(const Matrix<float>& x, std::size_t begin, std::size_t count) {
  Matrix<T> out(count, x.cols());
  for (std::size_t t = 0; t < count; ++t) {
    auto src = x.row(begin + t);
    auto dst = out.row(t);
    for (std::size_t k = 0; k < x.cols(); ++k) dst[k] = static_cast<T>(src[k]);
  }
  return out;
}

}  // namespace detail

template <typename T>
EpochReport train_epoch(const std::vector<TrainSample>& samples, ModelParams<T>& params, OptimizerState<T>& state,
                        const ModelConfig& mc, const LossWeights& weights, const TrainConfig& tc, std::size_t epoch) {
  if (samples.empty()) throw InputError("train_epoch: empty dataset");
  EpochReport report;
  report.epoch = epoch;

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(mix_seed(tc.seed, epoch, 0x5f3759dfULL));
  shuffle(order, shuffle_rng);

  for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
    const std::size_t end = std::min(order.size(), begin + tc.batch_size);
    std::vector<std::optional<VideoGradient<T>>> results(end - begin);

    auto work = [&](std::size_t slot) {
      const std::size_t idx = order[begin + slot];
      const auto& sample = samples[idx];
      const Matrix<float>& x = *sample.features;
      if (x.rows() == 0) return;
      std::size_t first = 0, count = x.rows();
      if (tc.max_snippets && count > *tc.max_snippets) {
        Rng crop(mix_seed(tc.seed, epoch, 0xc409ULL + 2 * idx));
        first = static_cast<std::size_t>(crop.integer(0, static_cast<std::int64_t>(count - *tc.max_snippets)));
        count = *tc.max_snippets;
      }
      results[slot] = video_gradient(detail::crop_rows<T>(x, first, count), sample.labels, params, mc, weights, true,
                                     mix_seed(tc.seed, epoch, 0xd409ULL + 2 * idx + 1));
    };

    const std::size_t workers = std::min(tc.threads, results.size());
    if (workers <= 1) {
      for (std::size_t s = 0; s < results.size(); ++s) work(s);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < results.size(); s += workers) work(s);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Reduce in batch order so the sum does not depend on thread timing.
    std::vector<Matrix<T>> acc;
    std::size_t used = 0;
    for (auto& r : results) {
      if (!r) {
        ++report.skipped;
        continue;
      }
      if (acc.empty()) {
        acc = std::move(r->grads);
      } else {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += r->grads[i];
      }
      report.cw += r->loss.cw;
      report.ca += r->loss.ca;
      report.mil += r->loss.mil;
      report.total += r->loss.total;
      ++used;
    }
    if (used == 0) continue;
    for (auto& g : acc) g *= T{1} / static_cast<T>(used);
    adam_step(params, acc, state, tc);
    report.videos += used;
    ++report.steps;
  }
  if (report.videos > 0) {
    const double n = static_cast<double>(report.videos);
    report.cw /= n;
    report.ca /= n;
    report.mil /= n;
    report.total /= n;
  }
  return report;
}

// ---------------------------------------------------------------------------
// History and resumable state

inline void write_history(const std::filesystem::path& path, const std::vector<EpochReport>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write loss history " + path.string());
  out << "epoch,l_cw,l_ca,l_mil,total\n";
  out.precision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.cw << ',' << r.ca << ',' << r.mil << ',' << r.total << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline constexpr std::array<char, 4> kStateMagic{'F', 'A', 'C', 'S'};
inline constexpr std::uint32_t kStateVersion = 1;

/// Everything needed to continue training bit-identically: full-precision
/// parameters, Adam moments, step counter and the loss history so far.
template <typename T>
struct TrainState {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  std::vector<EpochReport> history;
};

template <typename T>
void save_train_state(const std::filesystem::path& path, const TrainState<T>& s) {
  binary::Writer w;
  w.bytes(kStateMagic.data(), 4);
  w.u32(kStateVersion);
  w.u64(s.optimizer.step);
  auto put = [&](const Matrix<T>& m) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (T v : m.storage()) w.f64(static_cast<double>(v));
  };
  for (const auto* m : s.params.tensors()) put(*m);
  for (const auto& m : s.optimizer.first) put(m);
  for (const auto& m : s.optimizer.second) put(m);
  w.u32(static_cast<std::uint32_t>(s.history.size()));
  for (const auto& r : s.history) {
    w.u64(r.epoch);
    w.f64(r.cw);
    w.f64(r.ca);
    w.f64(r.mil);
    w.f64(r.total);
    w.u64(r.videos);
    w.u64(r.skipped);
    w.u64(r.steps);
  }
  w.save(path);
}

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& path, const ModelConfig& mc) {
  auto r = binary::Reader::from_file(path);
  if (r.magic() != kStateMagic) throw FormatError(r.prefix() + "bad magic, expected FACS", 0);
  if (r.u32() != kStateVersion) throw FormatError(r.prefix() + "unsupported state version", 4);
  TrainState<T> s;
  s.optimizer.step = r.u64();
  auto get = [&] {
    const std::size_t rows = r.u32(), cols = r.u32();
    r.need(8 * rows * cols, "tensor");
    Matrix<T> m(rows, cols);
    for (auto& v : m.storage()) v = static_cast<T>(r.f64());
    return m;
  };
  for (auto* m : s.params.tensors()) *m = get();
  s.params.validate(mc);
  for (int i = 0; i < 6; ++i) s.optimizer.first.push_back(get());
  for (int i = 0; i < 6; ++i) s.optimizer.second.push_back(get());
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    EpochReport e;
    e.epoch = r.u64();
    e.cw = r.f64();
    e.ca = r.f64();
    e.mil = r.f64();
    e.total = r.f64();
    e.videos = r.u64();
    e.skipped = r.u64();
    e.steps = r.u64();
    s.history.push_back(e);
  }
  return s;
}

struct FitOptions {
  std::optional<std::filesystem::path> checkpoint;  // final FACN checkpoint
  std::optional<std::filesystem::path> history;     // CSV loss history
  std::optional<std::filesystem::path> state;       // resumable training state
  bool resume = false;                              // continue from `state` if it exists
  std::function<void(const EpochReport&)> on_epoch;
};

template <typename T>
struct FitResult {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  std::vector<EpochReport> history;
};

namespace detail {

inline std::filesystem::path interval_checkpoint_path(const std::filesystem::path& base, std::size_t epoch) {
  auto p = base;
  p.replace_filename(base.stem().string() + ".epoch" + std::to_string(epoch) + base.extension().string());
  return p;
}

}  // namespace detail

/// Runs `tc.epochs` epochs (continuing from saved state when resuming).
template <typename T>
FitResult<T> fit(const std::vector<TrainSample>& samples, const ModelConfig& mc, const TrainConfig& tc,
                 const LossWeights& weights, const FitOptions& opts = {}) {
  mc.validate();
  tc.validate();
  weights.validate();
  if (samples.empty()) throw InputError("fit: no training videos");

  FitResult<T> res;
  if (opts.resume && opts.state && std::filesystem::exists(*opts.state)) {
    auto st = load_train_state<T>(*opts.state, mc);
    res.params = std::move(st.params);
    res.optimizer = std::move(st.optimizer);
    res.history = std::move(st.history);
  } else {
    res.params = init_params<T>(mc, mix_seed(tc.seed, 0x1a17ULL));
    res.optimizer = OptimizerState<T>::zeros_like(res.params);
  }

  for (std::size_t epoch = res.history.size() + 1; epoch <= tc.epochs; ++epoch) {
    auto report = train_epoch(samples, res.params, res.optimizer, mc, weights, tc, epoch);
    res.history.push_back(report);
    if (opts.on_epoch) opts.on_epoch(report);
    if (opts.history) write_history(*opts.history, res.history);
    const bool last = epoch == tc.epochs;
    if (opts.state && (last || (tc.checkpoint_interval && epoch % tc.checkpoint_interval == 0))) {
      save_train_state<T>(*opts.state, {res.params, res.optimizer, res.history});
    }
    if (opts.checkpoint && !last && tc.checkpoint_interval && epoch % tc.checkpoint_interval == 0) {
      save_checkpoint(detail::interval_checkpoint_path(*opts.checkpoint, epoch), mc, res.params);
    }
  }
  if (opts.checkpoint) save_checkpoint(*opts.checkpoint, mc, res.params);
  if (opts.history) write_history(*opts.history, res.history);
  return res;
}

}  // namespace facnet
