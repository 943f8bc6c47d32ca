#include "adt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <atomic>
#include <future>
#include <stdexcept>
#include <thread>

#include "adt/evaluation.hpp"
#include "adt/rng.hpp"
#include "adt/synthdata.hpp"
#include "json.hpp"

namespace adt::train {

namespace {

enum Role : std::uint64_t {
  kInit = 0xA0,
  kPreBatch,
  kPreAug,
  kSrcBatch,
  kSrcAug,
  kTgtBatch,
  kTgtWeak,
  kTgtStrong,
  kZoom,
  kAttackCoin,
};

// one stream per (iteration, batch slot): parallel and serial execution agree
Rng slot_rng(std::uint64_t seed, std::uint64_t role, long long iteration, int slot) {
  return Rng::derive(seed, role, (static_cast<std::uint64_t>(iteration) << 16) |
                                     static_cast<std::uint64_t>(slot));
}

unsigned worker_count(std::size_t jobs) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(jobs, hw));
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, int count) {
  std::vector<std::size_t> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
  return idx;
}

void accumulate(std::vector<double>& acc, const std::vector<double>& g, double scale) {
  if (acc.empty()) acc.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
}

int zoom_size(int n, double r) { return std::max(1, static_cast<int>(std::lround(n * r))); }

void clip_gradient(std::vector<double>& grad, double max_norm) {
  if (max_norm <= 0 || grad.empty()) return;
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
}

aug::AugmentConfig strong_cfg_for(const std::array<float, 3>& mean) {
  aug::AugmentConfig cfg;
  cfg.cutout_fill = mean;
  return cfg;
}

void check_attack_config(const atk::AttackConfig& ac) {
  if (!(ac.alpha > 0) || ac.epsilon < 0 || ac.t_max_attack < 0 || ac.p_attack < 0 ||
      ac.p_attack > 1)
    throw std::invalid_argument("invalid attack config");
}

}  // namespace

void TrainConfig::validate() const {
  if (beta < 0 || beta > 1) throw std::invalid_argument("config: beta outside [0,1]");
  if (delta < 0 || delta > 1) throw std::invalid_argument("config: delta outside [0,1]");
  if (lambda_s < 0 || lambda_t < 0) throw std::invalid_argument("config: negative loss weight");
  if (!(lr > 0)) throw std::invalid_argument("config: lr must be > 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("config: momentum outside [0,1)");
  if (grad_clip < 0) throw std::invalid_argument("config: grad_clip must be >= 0");
  if (label_smoothing < 0 || label_smoothing >= 1)
    throw std::invalid_argument("config: label_smoothing outside [0,1)");
  if (r_in_min < 1 || r_in_max < r_in_min) throw std::invalid_argument("config: bad r_in range");
  if (r_out_min <= 0 || r_out_max < r_out_min || r_out_max > 1)
    throw std::invalid_argument("config: bad r_out range");
  if (s_min < 0) throw std::invalid_argument("config: s_min must be >= 0");
  if (t_max_iteration < 0 || burn_in < 0) throw std::invalid_argument("config: negative iterations");
  if (batch_size <= 0) throw std::invalid_argument("config: batch_size must be > 0");
  if (eval_every < 0 || checkpoint_every < 0) throw std::invalid_argument("config: bad cadence");
  if (teacher_score_thresh < 0 || teacher_score_thresh > 1 || nms_thresh < 0 || nms_thresh > 1)
    throw std::invalid_argument("config: thresholds outside [0,1]");
}

// ---------------------------------------------------------------------------
// metrics log

namespace {
struct LogImpl {
  std::ofstream out;
};
}  // namespace

MetricsLog::MetricsLog(const std::string& path) {
  auto* impl = new LogImpl;
  impl->out.open(path, std::ios::app);
  if (!impl->out) {
    delete impl;
    throw std::runtime_error("MetricsLog: cannot open " + path);
  }
  impl_ = impl;
}

MetricsLog::~MetricsLog() { delete static_cast<LogImpl*>(impl_); }

MetricsLog::MetricsLog(MetricsLog&& o) noexcept : impl_(o.impl_) { o.impl_ = nullptr; }

MetricsLog& MetricsLog::operator=(MetricsLog&& o) noexcept {
  if (this != &o) {
    delete static_cast<LogImpl*>(impl_);
    impl_ = o.impl_;
    o.impl_ = nullptr;
  }
  return *this;
}

void MetricsLog::line(const std::string& json_line) {
  if (!impl_) return;
  auto* impl = static_cast<LogImpl*>(impl_);
  impl->out << json_line << "\n";
  impl->out.flush();
}

// ---------------------------------------------------------------------------
// primitive operations

det::ModelState ema_update(const det::ModelState& teacher, const det::ModelState& student,
                           double beta) {
  if (!(teacher.arch == student.arch) || teacher.params.size() != student.params.size())
    throw std::invalid_argument("ema_update: architecture mismatch");
  if (beta < 0 || beta > 1) throw std::invalid_argument("ema_update: beta outside [0,1]");
  det::ModelState out = teacher;
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    out.params[i] = static_cast<float>(beta * static_cast<double>(teacher.params[i]) +
                                       (1.0 - beta) * static_cast<double>(student.params[i]));
  }
  return out;
}

LabeledBoxes filter_pseudo_labels(const LabeledBoxes& dets, double delta) {
  if (!dets.scores && !dets.empty())
    throw std::invalid_argument("filter_pseudo_labels: scores required");
  LabeledBoxes out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if ((*dets.scores)[i] >= delta) {
      out.boxes.push_back(dets.boxes[i]);
      out.classes.push_back(dets.classes[i]);
    }
  }
  return out;
}

ImageTensor zoom_in(const ImageTensor& img, double r_in) {
  if (!(r_in > 1.0)) throw std::invalid_argument("zoom_in: ratio must be > 1");
  return resize_bilinear(img, zoom_size(img.height, r_in), zoom_size(img.width, r_in));
}

ZoomOutResult zoom_out(const ImageTensor& strong_img, const LabeledBoxes& labels_from_zoomed_in,
                       double r_in, double r_out, double s_min) {
  if (!(r_out > 0.0) || !(r_out < 1.0)) throw std::invalid_argument("zoom_out: need 0 < r_out < 1");
  if (!(r_in > 1.0)) throw std::invalid_argument("zoom_out: need r_in > 1");
  const int out_h = zoom_size(strong_img.height, r_out);
  const int out_w = zoom_size(strong_img.width, r_out);
  const int in_h = zoom_size(strong_img.height, r_in);
  const int in_w = zoom_size(strong_img.width, r_in);
  ZoomOutResult res;
  res.image = resize_bilinear(strong_img, out_h, out_w);
  const double fx = static_cast<double>(out_w) / in_w;
  const double fy = static_cast<double>(out_h) / in_h;
  res.labels = filter_min_size(scale_boxes_xy(labels_from_zoomed_in, fx, fy), s_min);
  return res;
}

double evaluate_map50(const det::ModelState& model, const std::vector<LabeledImage>& eval_data,
                      int num_classes, double score_thresh, double nms_thresh) {
  std::vector<LabeledBoxes> dets(eval_data.size()), gts(eval_data.size());
  const unsigned workers = worker_count(eval_data.size());
  std::vector<std::future<void>> futures;
  std::atomic<std::size_t> next{0};
  for (unsigned w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&]() {
      for (std::size_t i = next.fetch_add(1); i < eval_data.size(); i = next.fetch_add(1)) {
        dets[i] = det::detect(model, eval_data[i].image, score_thresh, nms_thresh);
        gts[i] = eval_data[i].labels;
      }
    }));
  }
  for (auto& f : futures) f.get();
  return eval::map_over(dets, gts, num_classes, {0.5});
}

// ---------------------------------------------------------------------------
// burn-in

det::ModelState pretrain_source(const SourceDataset& data, const det::ArchSpec& arch,
                                const TrainConfig& cfg, MetricsLog* log,
                                const std::string& abort_checkpoint_dir) {
  cfg.validate();
  if (data.items.empty()) throw std::invalid_argument("pretrain_source: empty dataset");
  det::ModelState model = det::ModelState::init(arch, mix64(cfg.seed) ^ kInit);
  std::vector<double> velocity(model.params.size(), 0.0);

  for (int it = 0; it < cfg.burn_in; ++it) {
    Rng batch_rng = Rng::derive(cfg.seed, kPreBatch, it);
    const std::vector<std::size_t> idx = sample_indices(batch_rng, data.items.size(), cfg.batch_size);

    struct Item {
      double loss;
      std::vector<double> grad;
    };
    std::vector<std::future<Item>> futures;
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      futures.push_back(std::async(std::launch::async, [&, slot]() {
        Rng aug_rng = slot_rng(cfg.seed, kPreAug, it, slot);
        const LabeledImage& item = data.items[idx[slot]];
        aug::WeakResult weak = aug::weak_augment(item.image, item.labels, aug_rng);
        det::LossSpec lspec{weak.labels};
        lspec.label_smoothing = cfg.label_smoothing;
        det::GradientEval ev = det::loss_gradients(model, weak.image, lspec, true, false);
        return Item{ev.loss, std::move(ev.param_grad)};
      }));
    }
    std::vector<double> grad;
    double loss = 0.0;
    for (auto& f : futures) {
      Item item = f.get();
      loss += item.loss;
      accumulate(grad, item.grad, 1.0);
    }
    const double inv_b = 1.0 / cfg.batch_size;
    loss *= inv_b;
    for (double& g : grad) g *= inv_b;

    if (!std::isfinite(loss)) {
      if (!abort_checkpoint_dir.empty())
        det::save_checkpoint(abort_checkpoint_dir + "/pretrain_abort.ckpt", model, it);
      throw std::runtime_error("pretrain_source: non-finite loss at iteration " +
                               std::to_string(it));
    }
    clip_gradient(grad, cfg.grad_clip);
    for (std::size_t i = 0; i < grad.size(); ++i)
      velocity[i] = cfg.momentum * velocity[i] + grad[i];
    model = det::sgd_step(model, velocity, cfg.lr);

    if (log && log->open()) {
      nlohmann::json j;
      j["record"] = "pretrain";
      j["iter"] = it + 1;
      j["loss"] = loss;
      log->line(j.dump());
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// one mutual-learning step

void train_step(TrainState& state, std::span<const LabeledImage> source_batch,
                std::span<const ImageTensor> target_batch, const SourceDataset& source_stats,
                const TargetDataset& target_stats, const TrainConfig& tc,
                const atk::AttackConfig& ac, StepTrace* trace) {
  if (source_batch.empty() || target_batch.empty())
    throw std::invalid_argument("train_step: empty batch");
  check_attack_config(ac);
  const long long it = state.iteration;

  // --- supervised branch: strongly augmented source
  const aug::AugmentConfig src_cfg = strong_cfg_for(source_stats.mean);
  std::vector<double> grad_s;
  double loss_s = 0.0;
  {
    struct Item {
      double loss;
      std::vector<double> grad;
    };
    std::vector<std::future<Item>> futures;
    for (int slot = 0; slot < static_cast<int>(source_batch.size()); ++slot) {
      futures.push_back(std::async(std::launch::async, [&, slot]() {
        Rng aug_rng = slot_rng(state.seed, kSrcAug, it, slot);
        const LabeledImage& item = source_batch[slot];
        aug::StrongResult strong = aug::strong_augment(item.image, aug_rng, src_cfg);
        det::LossSpec lspec{item.labels};
        lspec.label_smoothing = tc.label_smoothing;
        det::GradientEval ev = det::loss_gradients(state.student, strong.image, lspec, true, false);
        return Item{ev.loss, std::move(ev.param_grad)};
      }));
    }
    for (auto& f : futures) {
      Item item = f.get();
      loss_s += item.loss;
      accumulate(grad_s, item.grad, 1.0);
    }
  }
  loss_s /= static_cast<double>(source_batch.size());
  for (double& g : grad_s) g /= static_cast<double>(source_batch.size());

  // --- zoom ratios and the attack coin are drawn once per batch
  Rng zoom_rng = Rng::derive(state.seed, kZoom, static_cast<std::uint64_t>(it));
  const bool zz = !(tc.r_in_min == 1.0 && tc.r_in_max == 1.0 && tc.r_out_min == 1.0 &&
                    tc.r_out_max == 1.0);
  const double r_in = zz ? zoom_rng.uniform(tc.r_in_min, tc.r_in_max) : 1.0;
  const double r_out = zz ? zoom_rng.uniform(tc.r_out_min, tc.r_out_max) : 1.0;
  Rng coin_rng = Rng::derive(state.seed, kAttackCoin, static_cast<std::uint64_t>(it));
  const bool attacked = atk::should_attack(coin_rng, ac.p_attack);

  // --- teacher update happens before pseudo-labeling
  state.teacher = ema_update(state.teacher, state.student, tc.beta);

  const aug::AugmentConfig tgt_cfg = strong_cfg_for(target_stats.mean);

  std::vector<double> grad_t;
  double loss_t = 0.0;
  if (trace) {
    trace->r_in = r_in;
    trace->r_out = r_out;
  }
  {
    struct Item {
      double loss = 0.0;
      std::vector<double> grad;
      LabeledBoxes pseudo;
      std::vector<double> kept_scores;
      std::vector<double> attack_trace;
    };
    std::vector<std::future<Item>> futures;
    for (int slot = 0; slot < static_cast<int>(target_batch.size()); ++slot) {
      futures.push_back(std::async(std::launch::async, [&, slot]() {
        Item res;
        const ImageTensor& img = target_batch[slot];
        Rng weak_rng = slot_rng(state.seed, kTgtWeak, it, slot);
        Rng strong_rng = slot_rng(state.seed, kTgtStrong, it, slot);
        aug::WeakResult weak = aug::weak_augment(img, LabeledBoxes{}, weak_rng);
        const ImageTensor x_in = zz ? zoom_in(weak.image, r_in) : weak.image;
        LabeledBoxes dets =
            det::detect(state.teacher, x_in, tc.teacher_score_thresh, tc.nms_thresh);
        for (std::size_t i = 0; i < dets.size(); ++i)
          if ((*dets.scores)[i] >= tc.delta) res.kept_scores.push_back((*dets.scores)[i]);
        LabeledBoxes pseudo_in = filter_pseudo_labels(dets, tc.delta);

        aug::StrongResult strong = aug::strong_augment(weak.image, strong_rng, tgt_cfg);
        ImageTensor x_out;
        if (zz) {
          ZoomOutResult zo = zoom_out(strong.image, pseudo_in, r_in, r_out, tc.s_min);
          x_out = std::move(zo.image);
          res.pseudo = std::move(zo.labels);
        } else {
          x_out = std::move(strong.image);
          res.pseudo = std::move(pseudo_in);
        }
        if (res.pseudo.empty()) return res;  // no confident teacher detections

        ImageTensor x_adv;
        if (attacked) {
          atk::PgdResult pr = atk::pgd(state.student, x_out, res.pseudo, ac);
          x_adv = std::move(pr.image);
          res.attack_trace = std::move(pr.trace);
        } else {
          x_adv = std::move(x_out);
        }
        det::LossSpec tspec{res.pseudo};
        tspec.label_smoothing = tc.label_smoothing;
        det::GradientEval ev = det::loss_gradients(state.student, x_adv, tspec, true, false);
        res.loss = ev.loss;
        res.grad = std::move(ev.param_grad);
        return res;
      }));
    }
    for (auto& f : futures) {
      Item item = f.get();
      loss_t += item.loss;
      if (!item.grad.empty()) accumulate(grad_t, item.grad, 1.0);
      if (trace) {
        trace->pseudo_count += static_cast<int>(item.pseudo.size());
        trace->pseudo_labels.push_back(std::move(item.pseudo));
        trace->pseudo_scores_prefilter.insert(trace->pseudo_scores_prefilter.end(),
                                              item.kept_scores.begin(), item.kept_scores.end());
        if (!item.attack_trace.empty())
          trace->attack_traces.push_back(std::move(item.attack_trace));
      }
    }
  }
  loss_t /= static_cast<double>(target_batch.size());
  for (double& g : grad_t) g /= static_cast<double>(target_batch.size());

  if (!std::isfinite(loss_s) || !std::isfinite(loss_t))
    throw std::runtime_error("train_step: non-finite loss at iteration " + std::to_string(it));

  // --- combined update
  std::vector<double> grad(state.student.params.size(), 0.0);
  if (!grad_s.empty())
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += tc.lambda_s * grad_s[i];
  if (!grad_t.empty())
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += tc.lambda_t * grad_t[i];

  clip_gradient(grad, tc.grad_clip);
  if (state.velocity.size() != grad.size()) state.velocity.assign(grad.size(), 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i)
    state.velocity[i] = tc.momentum * state.velocity[i] + grad[i];
  state.student = det::sgd_step(state.student, state.velocity, tc.lr);
  state.iteration += 1;

  if (trace) {
    trace->loss_source = loss_s;
    trace->loss_target = loss_t;
    trace->attacked = attacked;
  }
}

// ---------------------------------------------------------------------------
// full pipeline

TrainResult train(const SourceDataset& source, const TargetDataset& target,
                  const std::vector<LabeledImage>& target_eval, const det::ArchSpec& arch,
                  const TrainConfig& tc, const atk::AttackConfig& ac, const TrainOptions& options) {
  tc.validate();
  check_attack_config(ac);
  if (source.items.empty() || target.images.empty())
    throw std::invalid_argument("train: empty dataset");

  MetricsLog log;
  if (!options.metrics_path.empty()) log = MetricsLog(options.metrics_path);

  TrainState st;
  if (options.resume) {
    st = *options.resume;
  } else {
    nlohmann::json header;
    header["record"] = "header";
    header["kind"] = "adaptation";
    header["seed"] = tc.seed;
    header["beta"] = tc.beta;
    header["delta"] = tc.delta;
    header["lambda_s"] = tc.lambda_s;
    header["lambda_t"] = tc.lambda_t;
    header["lr"] = tc.lr;
    header["p_attack"] = ac.p_attack;
    header["epsilon"] = ac.epsilon;
    header["alpha"] = ac.alpha;
    header["t_max_attack"] = ac.t_max_attack;
    header["t_max_iteration"] = tc.t_max_iteration;
    header["burn_in"] = tc.burn_in;
    header["zoom"] = !(tc.r_in_min == 1.0 && tc.r_in_max == 1.0);
    log.line(header.dump());

    det::ModelState source_model =
        options.source_model ? *options.source_model
                             : pretrain_source(source, arch, tc, &log, options.checkpoint_dir);
    st.student = source_model;
    st.teacher = std::move(source_model);
    st.velocity.assign(st.student.params.size(), 0.0);
    st.iteration = 0;
    st.seed = tc.seed;
  }

  auto run_eval = [&](TrainState& s) {
    if (target_eval.empty()) return;
    const double map50 = evaluate_map50(s.teacher, target_eval, arch.num_classes);
    s.history.push_back({s.iteration, map50});
    nlohmann::json j;
    j["record"] = "eval";
    j["iter"] = s.iteration;
    j["model"] = "teacher";
    j["map50"] = map50;
    log.line(j.dump());
  };

  while (st.iteration < tc.t_max_iteration) {
    Rng src_batch_rng = Rng::derive(st.seed, kSrcBatch, static_cast<std::uint64_t>(st.iteration));
    Rng tgt_batch_rng = Rng::derive(st.seed, kTgtBatch, static_cast<std::uint64_t>(st.iteration));
    const std::vector<std::size_t> sidx =
        sample_indices(src_batch_rng, source.items.size(), tc.batch_size);
    const std::vector<std::size_t> tidx =
        sample_indices(tgt_batch_rng, target.images.size(), tc.batch_size);

    std::vector<LabeledImage> sbatch;
    sbatch.reserve(sidx.size());
    for (std::size_t k : sidx) sbatch.push_back(source.items[k]);
    std::vector<ImageTensor> tbatch;
    tbatch.reserve(tidx.size());
    for (std::size_t k : tidx) tbatch.push_back(target.images[k]);

    StepTrace trace;
    try {
      train_step(st, sbatch, tbatch, source, target, tc, ac, &trace);
    } catch (const std::runtime_error&) {
      if (!options.checkpoint_dir.empty()) save_train_state(options.checkpoint_dir, st);
      throw;
    }

    {
      nlohmann::json j;
      j["record"] = "step";
      j["iter"] = st.iteration;
      j["l_s"] = trace.loss_source;
      j["l_t"] = trace.loss_target;
      j["attacked"] = trace.attacked;
      j["pseudo"] = trace.pseudo_count;
      if (!trace.attack_traces.empty()) {
        double first = 0.0, last = 0.0;
        for (const auto& tr : trace.attack_traces) {
          first += tr.front();
          last += tr.back();
        }
        j["trace_first"] = first / trace.attack_traces.size();
        j["trace_last"] = last / trace.attack_traces.size();
      }
      log.line(j.dump());
    }

    if (tc.eval_every > 0 && st.iteration % tc.eval_every == 0 &&
        st.iteration < tc.t_max_iteration)
      run_eval(st);
    if (tc.checkpoint_every > 0 && !options.checkpoint_dir.empty() &&
        st.iteration % tc.checkpoint_every == 0)
      save_train_state(options.checkpoint_dir, st);
  }

  run_eval(st);  // final evaluation
  if (!options.checkpoint_dir.empty()) save_train_state(options.checkpoint_dir, st);

  {
    nlohmann::json j;
    j["record"] = "final";
    j["iter"] = st.iteration;
    if (!st.history.empty()) j["map50_teacher"] = st.history.back().map50;
    log.line(j.dump());
  }

  return {std::move(st.student), std::move(st.teacher), std::move(st.history)};
}

// ---------------------------------------------------------------------------
// train-state persistence

void save_train_state(const std::filesystem::path& dir, const TrainState& state) {
  std::filesystem::create_directories(dir);
  det::save_checkpoint((dir / "student.ckpt").string(), state.student, state.iteration);
  det::save_checkpoint((dir / "teacher.ckpt").string(), state.teacher, state.iteration);
  std::ofstream f(dir / "trainstate.bin", std::ios::binary);
  if (!f) throw std::runtime_error("save_train_state: cannot open trainstate.bin");
  f << "ADT-TRAINSTATE 1\n";
  f << "iteration " << state.iteration << "\n";
  f << "seed " << state.seed << "\n";
  f << "history " << state.history.size() << "\n";
  f.precision(17);
  for (const EvalPoint& p : state.history) f << p.iteration << " " << p.map50 << "\n";
  f << "velocity " << state.velocity.size() << "\n";
  f.write(reinterpret_cast<const char*>(state.velocity.data()),
          static_cast<std::streamsize>(state.velocity.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_train_state: write failed");
}

TrainState load_train_state(const std::filesystem::path& dir) {
  TrainState st;
  det::Checkpoint student = det::load_checkpoint((dir / "student.ckpt").string());
  det::Checkpoint teacher = det::load_checkpoint((dir / "teacher.ckpt").string());
  st.student = std::move(student.state);
  st.teacher = std::move(teacher.state);

  std::ifstream f(dir / "trainstate.bin", std::ios::binary);
  if (!f) throw std::runtime_error("load_train_state: cannot open trainstate.bin");
  std::string line;
  std::getline(f, line);
  if (line != "ADT-TRAINSTATE 1") throw std::runtime_error("load_train_state: bad magic");
  std::string key;
  f >> key >> st.iteration;
  if (key != "iteration") throw std::runtime_error("load_train_state: missing iteration");
  f >> key >> st.seed;
  if (key != "seed") throw std::runtime_error("load_train_state: missing seed");
  std::size_t n = 0;
  f >> key >> n;
  if (key != "history") throw std::runtime_error("load_train_state: missing history");
  st.history.resize(n);
  for (std::size_t i = 0; i < n; ++i) f >> st.history[i].iteration >> st.history[i].map50;
  f >> key >> n;
  if (key != "velocity") throw std::runtime_error("load_train_state: missing velocity");
  f.get();  // newline before the binary block
  st.velocity.resize(n);
  f.read(reinterpret_cast<char*>(st.velocity.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("load_train_state: truncated velocity block");
  return st;
}

// ---------------------------------------------------------------------------
// dataset adapters

namespace {

std::array<float, 3> channel_mean(const std::vector<ImageTensor>& images) {
  std::array<double, 3> acc = {0, 0, 0};
  std::size_t count = 0;
  for (const ImageTensor& img : images) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) acc[c] += img.at(y, x, c);
    count += static_cast<std::size_t>(img.height) * img.width;
  }
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
  if (count)
    for (int c = 0; c < 3; ++c) mean[c] = static_cast<float>(acc[c] / count);
  return mean;
}

}  // namespace

SourceDataset load_labeled_dataset(const std::filesystem::path& manifest_path) {
  const synth::DatasetManifest m = synth::read_dataset(manifest_path);
  SourceDataset ds;
  std::vector<ImageTensor> imgs;
  for (const synth::ManifestEntry& e : m.entries) {
    if (!e.labels)
      throw std::runtime_error("load_labeled_dataset: entry without labels: " + e.image_path);
    LabeledImage item;
    item.image = synth::load_image(manifest_path, e);
    item.labels = *e.labels;
    imgs.push_back(item.image);
    ds.items.push_back(std::move(item));
  }
  ds.mean = channel_mean(imgs);
  return ds;
}

TargetDataset load_unlabeled_dataset(const std::filesystem::path& manifest_path) {
  const synth::DatasetManifest m = synth::read_dataset(manifest_path);
  TargetDataset ds;
  for (const synth::ManifestEntry& e : m.entries)
    ds.images.push_back(synth::load_image(manifest_path, e));
  ds.mean = channel_mean(ds.images);
  return ds;
}

std::vector<LabeledImage> load_eval_dataset(const std::filesystem::path& manifest_path) {
  const synth::DatasetManifest m = synth::read_dataset(manifest_path);
  std::vector<LabeledImage> out;
  for (const synth::ManifestEntry& e : m.entries) {
    if (!e.labels)
      throw std::runtime_error("load_eval_dataset: entry without labels: " + e.image_path);
    out.push_back({synth::load_image(manifest_path, e), *e.labels});
  }
  return out;
}

}  // namespace adt::train
