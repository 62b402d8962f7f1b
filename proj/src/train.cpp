#include "partsmamba/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <thread>

#include <json.hpp>

#include "partsmamba/ops.hpp"

namespace partsmamba {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, const ParamStore& ps, std::size_t total_epochs)
      : cfg_(cfg), total_epochs_(total_epochs) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_.emplace_back(ps[i].value.shape());
      v_.emplace_back(ps[i].value.shape());
    }
  }

  void step(ParamStore& ps, std::size_t epoch) {
    ++t_;
    if (cfg_.optimizer == Optimizer::Adam) {
      const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < ps.size(); ++i) {
        auto w = ps[i].value.data();
        auto g = ps[i].grad.data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
          m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
          v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
          w[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + kAdamEps);
        }
      }
      return;
    }
    // Momentum SGD with cosine decay over the stage.
    const double progress =
        total_epochs_ ? static_cast<double>(epoch) / static_cast<double>(total_epochs_) : 0.0;
    const double lr = 0.5 * cfg_.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto w = ps[i].value.data();
      auto g = ps[i].grad.data();
      auto vel = m_[i].data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        vel[k] = cfg_.momentum * vel[k] + g[k];
        w[k] -= lr * vel[k];
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::size_t total_epochs_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

struct SampleOutcome {
  std::vector<Tensor> grads;  // indexed like the parameter store
  double loss = 0.0;
  bool correct = false;
  bool masked = false;
};

std::size_t argmax(const Tensor& logits) {
  const auto d = logits.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::vector<std::size_t> store_indices(const ParamStore& ps, const Tape& tape) {
  std::vector<std::size_t> idx;
  for (const auto& [p, g] : tape.param_grads()) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (&ps[i] == p) {
        idx.push_back(i);
        break;
      }
    }
  }
  return idx;
}

SampleOutcome run_sample(const Model& model, const Sample& s, const OcclusionMask* mask) {
  Tape tape;
  const Tensor clip = mask ? apply_mask(s.clip, *mask) : s.clip;
  Var logits = model.forward(tape, clip);
  Var loss = cross_entropy(logits, s.label);
  tape.backward(loss);

  SampleOutcome out;
  out.loss = loss.value()[0];
  out.correct = argmax(logits.value()) == s.label;
  out.masked = mask != nullptr;
  const ParamStore& ps = model.params();
  out.grads.resize(ps.size());
  const auto grads = tape.param_grads();
  const auto idx = store_indices(ps, tape);
  for (std::size_t k = 0; k < grads.size(); ++k) out.grads[idx[k]] = grads[k].second;
  return out;
}

}  // namespace

std::vector<Sample> prepare_samples(const std::vector<SkeletonClip>& clips,
                                    const ModelConfig& config) {
  std::vector<Sample> out;
  out.reserve(clips.size());
  for (const auto& c : clips) {
    if (c.joint_count() != config.joints) {
      throw ConfigError("clip '" + c.source + "' has " + std::to_string(c.joint_count()) +
                        " joints, config expects " + std::to_string(config.joints));
    }
    if (c.label < 0 || static_cast<std::size_t>(c.label) >= config.num_classes) {
      throw ConfigError("clip '" + c.source + "' label " + std::to_string(c.label) +
                        " is outside [0, " + std::to_string(config.num_classes) + ")");
    }
    out.push_back(Sample{sample_window(c, config.window), static_cast<std::size_t>(c.label)});
  }
  return out;
}

std::string policy_name(OcclusionPolicy p) {
  return p == OcclusionPolicy::PartsMasked ? "parts-masked" : "none";
}

OcclusionPolicy parse_policy(const std::string& s) {
  if (s == "none") return OcclusionPolicy::None;
  if (s == "parts-masked") return OcclusionPolicy::PartsMasked;
  throw SpecError("training occlusion must be 'none' or 'parts-masked', got '" + s + "'");
}

std::string draw_training_scene(const OcclusionTable& table, std::uint64_t seed,
                                std::size_t stage, std::size_t epoch, std::size_t index) {
  const auto& scenes = table.scenes();
  Rng rng(derive_seed(seed, 0x6d61736bULL + stage, epoch, index));
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, scenes.size())(rng);
  return k == 0 ? std::string() : scenes[k - 1].name;
}

std::vector<EpochMetrics> train_stage(Model& model, const std::vector<Sample>& data,
                                      const TrainConfig& train, std::size_t epochs,
                                      const std::string& stage, const OcclusionTable& table,
                                      OcclusionPolicy policy, const EpochCallback& on_epoch) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (train.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  const ModelConfig& cfg = model.config();
  const std::size_t stage_id = stage == "gcn" ? 1 : 2;
  const std::size_t workers = std::max<std::size_t>(1, train.threads);
  ParamStore& ps = model.params();
  OptimizerState opt(train, ps, epochs);
  std::vector<EpochMetrics> log;

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, stage_id, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, masked = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += train.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + train.batch_size);
      std::vector<SampleOutcome> outcomes(b1 - b0);
      std::vector<std::optional<OcclusionMask>> masks(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        if (policy != OcclusionPolicy::PartsMasked) continue;
        const std::string scene = draw_training_scene(table, cfg.seed, stage_id, epoch, order[k]);
        if (!scene.empty()) masks[k - b0] = mask_parts(scene, table, cfg.joints, cfg.window);
      }
      auto work = [&](std::size_t k) {
        const std::size_t i = order[k];
        try {
          outcomes[k - b0] =
              run_sample(model, data[i], masks[k - b0] ? &*masks[k - b0] : nullptr);
        } catch (const NumericError& e) {
          throw NumericError("non-finite value in stage " + stage + ", epoch " +
                             std::to_string(epoch + 1) + ", sample " + std::to_string(i) + ": " +
                             e.what());
        }
      };
      if (workers == 1) {
        for (std::size_t k = b0; k < b1; ++k) work(k);
      } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t k = b0 + w; k < b1; k += workers) work(k);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
      }

      ps.zero_grad();
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (const auto& o : outcomes) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
          if (!o.grads[i].empty()) ps[i].grad += o.grads[i];
        }
        loss_sum += o.loss;
        correct += o.correct ? 1 : 0;
        masked += o.masked ? 1 : 0;
      }
      for (std::size_t i = 0; i < ps.size(); ++i) ps[i].grad *= inv;
      opt.step(ps, epoch);
      model.round_to_dtype();
    }

    EpochMetrics m;
    m.stage = stage;
    m.epoch = epoch + 1;
    m.occlusion = policy_name(policy);
    m.loss = loss_sum / static_cast<double>(data.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    m.masked_samples = masked;
    m.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(m.loss)) {
      throw NumericError("non-finite mean loss in stage " + stage + ", epoch " +
                         std::to_string(m.epoch));
    }
    log.push_back(m);
    if (on_epoch) on_epoch(m);
    if (stage_id == 2 && m.accuracy >= train.stop_accuracy) break;
  }
  return log;
}

TrainResult train_two_step(const std::vector<Sample>& data, const RunSettings& settings,
                           const SkeletonSpec& skeleton, OcclusionPolicy policy,
                           const EpochCallback& on_epoch) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  ModelConfig gcn_cfg = settings.model;
  gcn_cfg.blocks = 0;
  Model gcn(gcn_cfg, skeleton.partition, skeleton.graph);
  auto log = train_stage(gcn, data, settings.train, settings.train.epochs_gcn, "gcn",
                         skeleton.occlusion, policy, on_epoch);

  Model hybrid(settings.model, skeleton.partition, skeleton.graph);
  hybrid.copy_matching(gcn);
  auto log2 = train_stage(hybrid, data, settings.train, settings.train.epochs_hybrid, "hybrid",
                          skeleton.occlusion, policy, on_epoch);
  log.insert(log.end(), log2.begin(), log2.end());
  return TrainResult{std::move(gcn), std::move(hybrid), std::move(log)};
}

EvalResult evaluate(const Model& model, const std::vector<Sample>& data, const MaskFn& mask) {
  EvalResult r;
  r.samples = data.size();
  if (data.empty()) return r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape tape(false);
    const Tensor clip = mask ? apply_mask(data[i].clip, mask(i)) : data[i].clip;
    Var logits = model.forward(tape, clip);
    r.loss += cross_entropy(logits, data[i].label).value()[0];
    correct += argmax(logits.value()) == data[i].label ? 1 : 0;
  }
  r.loss /= static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

EvalReport evaluate_spec(const Model& model, const std::vector<Sample>& data,
                         const std::string& spec_text, const OcclusionTable& table,
                         std::uint64_t seed) {
  const OcclusionSpec spec = parse_occlusion_spec(spec_text);
  const ModelConfig& cfg = model.config();
  if (spec.kind == OcclusionSpec::Kind::Parts && !table.has_scene(spec.scene)) {
    throw SpecError("unknown occlusion scene '" + spec.scene + "'");
  }
  EvalReport report;
  report.occlusion = spec_text;
  const std::size_t reps = spec.seeded() ? kEvalRepetitions : 1;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    MaskFn fn;
    if (spec.kind != OcclusionSpec::Kind::None) {
      fn = [&, rep](std::size_t i) {
        return make_mask(spec, table, cfg.joints, cfg.window, derive_seed(seed, rep, i));
      };
    }
    report.repetitions.push_back(evaluate(model, data, fn));
  }
  for (const auto& r : report.repetitions) {
    report.mean.accuracy += r.accuracy / static_cast<double>(reps);
    report.mean.loss += r.loss / static_cast<double>(reps);
  }
  report.mean.samples = data.size();
  return report;
}

std::string metrics_line(const EpochMetrics& m, bool with_time) {
  nlohmann::ordered_json j;
  j["record"] = "epoch";
  j["stage"] = m.stage;
  j["epoch"] = m.epoch;
  j["split"] = "train";
  j["occlusion"] = m.occlusion;
  j["loss"] = m.loss;
  j["accuracy"] = m.accuracy;
  j["masked_samples"] = m.masked_samples;
  if (with_time) j["seconds"] = m.seconds;
  return j.dump();
}

std::vector<std::string> metrics_lines(const EvalReport& r, const std::string& split) {
  std::vector<std::string> out;
  auto line = [&](const std::string& run, const EvalResult& e) {
    nlohmann::ordered_json j;
    j["record"] = "eval";
    j["run"] = run;
    j["split"] = split;
    j["occlusion"] = r.occlusion;
    j["samples"] = e.samples;
    j["loss"] = e.loss;
    j["accuracy"] = e.accuracy;
    out.push_back(j.dump());
  };
  if (r.repetitions.size() > 1) {
    for (std::size_t i = 0; i < r.repetitions.size(); ++i) {
      line("rep" + std::to_string(i + 1), r.repetitions[i]);
    }
  }
  line("mean", r.mean);
  return out;
}

}  // namespace partsmamba
