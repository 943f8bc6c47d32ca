#include <cmath>
#include <filesystem>

#include "adt/config_io.hpp"
#include "adt/synthdata.hpp"
#include "adt/trainer.hpp"
#include "doctest.h"

using namespace adt;
using namespace adt::train;
namespace fs = std::filesystem;

namespace {

// tiny in-memory clear->fog task for fast trainer tests
struct TinyTask {
  SourceDataset source;
  TargetDataset target;
  std::vector<LabeledImage> target_eval;
};

TinyTask make_tiny_task(std::uint64_t seed, int n_source = 12, int n_target = 12, int n_eval = 4,
                        int size = 48) {
  TinyTask t;
  const ImageTensor depth = synth::vertical_depth_map(size, size, 0.3, 3.0);
  for (int i = 0; i < n_source + n_target + n_eval; ++i) {
    synth::SceneSpec spec;
    spec.seed = mix64(seed) + i;
    spec.height = size;
    spec.width = size;
    spec.object_count = 2;
    spec.min_size = 10;
    spec.max_size = 18;
    synth::SceneRender scene = synth::generate_scene(spec);
    if (i < n_source) {
      t.source.items.push_back({std::move(scene.image), std::move(scene.labels)});
    } else {
      ImageTensor foggy = synth::apply_fog(scene.image, 0.5, depth);
      if (i < n_source + n_target)
        t.target.images.push_back(std::move(foggy));
      else
        t.target_eval.push_back({std::move(foggy), std::move(scene.labels)});
    }
  }
  return t;
}

TrainConfig fast_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.batch_size = 2;
  tc.burn_in = 60;
  tc.t_max_iteration = 6;
  tc.eval_every = 0;
  tc.lr = 0.05;
  tc.delta = 0.3;  // low threshold so pseudo-labels actually flow in short tests
  return tc;
}

det::ModelState tiny_model(std::uint64_t seed) {
  det::ArchSpec arch;
  return det::ModelState::init(arch, seed);
}

}  // namespace

TEST_CASE("ema_update endpoint and paper-value cases") {
  det::ModelState teacher = tiny_model(1);
  det::ModelState student = tiny_model(2);

  const det::ModelState frozen = ema_update(teacher, student, 1.0);
  CHECK(frozen.params == teacher.params);

  const det::ModelState copied = ema_update(teacher, student, 0.0);
  CHECK(copied.params == student.params);

  det::ModelState one = teacher;
  one.params[0] = 1.0f;
  det::ModelState zero = student;
  zero.params[0] = 0.0f;
  const det::ModelState mixed = ema_update(one, zero, 0.9996);
  CHECK(mixed.params[0] == doctest::Approx(0.9996).epsilon(1e-7));

  det::ModelState other = student;
  other.arch.num_classes = 3;
  other.params.resize(other.arch.param_count());
  CHECK_THROWS_AS(ema_update(teacher, other, 0.5), std::invalid_argument);
}

TEST_CASE("filter_pseudo_labels thresholding") {
  LabeledBoxes dets;
  dets.push_back({0, 0, 10, 10}, 0, 0.93);
  dets.push_back({10, 10, 20, 20}, 1, 0.80);
  dets.push_back({20, 20, 30, 30}, 2, 0.79);

  const LabeledBoxes kept = filter_pseudo_labels(dets, 0.8);
  REQUIRE(kept.size() == 2);
  CHECK(kept.classes[0] == 0);
  CHECK(kept.classes[1] == 1);
  CHECK(!kept.scores.has_value());  // scores dropped: labels act as hard gt

  CHECK(filter_pseudo_labels(dets, 0.0).size() == 3);
  CHECK(filter_pseudo_labels(LabeledBoxes{}, 0.8).empty());
}

TEST_CASE("zoom_in size arithmetic and edge behavior") {
  ImageTensor img(96, 96, 3, 0.37f);
  const ImageTensor up = zoom_in(img, 1.5);
  CHECK(up.height == 144);
  CHECK(up.width == 144);
  for (float v : up.data) CHECK(v == doctest::Approx(0.37f));  // constants stay constant

  CHECK_THROWS_AS(zoom_in(img, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(zoom_in(img, 0.5), std::invalid_argument);

  // near-1 ratio rounds back to the original size: identity mapping
  const ImageTensor same = zoom_in(img, 1.0001);
  CHECK(same.height == 96);
  CHECK(same.data == img.data);
}

TEST_CASE("zoom_out label mapping and min-size filter") {
  ImageTensor strong(96, 96, 3, 0.2f);

  SUBCASE("r_in = 1/r_out scales labels by r_out^2") {
    LabeledBoxes labels;  // in the zoomed-in (192x192) frame
    labels.push_back({40, 40, 80, 80}, 1);
    const ZoomOutResult res = zoom_out(strong, labels, 2.0, 0.5, 0.0);
    CHECK(res.image.height == 48);
    REQUIRE(res.labels.size() == 1);
    CHECK(res.labels.boxes[0].x_min == doctest::Approx(10.0));  // 40 * 0.25
    CHECK(res.labels.boxes[0].x_max == doctest::Approx(20.0));
  }
  SUBCASE("boxes below s_min after the resize are removed") {
    LabeledBoxes labels;
    labels.push_back({50, 50, 60, 60}, 0);  // min side 10 in the zoomed-in frame
    // factor 72/144 = 0.5 -> side 5 < 8
    const ZoomOutResult res = zoom_out(strong, labels, 1.5, 0.75, 8.0);
    CHECK(res.labels.empty());
    const ZoomOutResult keep = zoom_out(strong, labels, 1.5, 0.75, 0.0);
    CHECK(keep.labels.size() == 1);  // s_min = 0 removes nothing
  }
  SUBCASE("invalid ratios throw") {
    CHECK_THROWS_AS(zoom_out(strong, LabeledBoxes{}, 1.5, 1.2, 0), std::invalid_argument);
    CHECK_THROWS_AS(zoom_out(strong, LabeledBoxes{}, 0.9, 0.5, 0), std::invalid_argument);
  }
}

TEST_CASE("pretrain_source is deterministic and fits the source split") {
  TinyTask task = make_tiny_task(5);
  TrainConfig tc = fast_config(9);
  tc.burn_in = 80;
  det::ArchSpec arch;

  const det::ModelState a = pretrain_source(task.source, arch, tc);
  const det::ModelState b = pretrain_source(task.source, arch, tc);
  CHECK(a.params == b.params);

  // held-out source loss decreases relative to the initialization
  TinyTask held = make_tiny_task(77, 6, 0, 0);
  const det::ModelState init = det::ModelState::init(arch, mix64(tc.seed) ^ 0xA0);
  double before = 0, after = 0;
  for (const LabeledImage& item : held.source.items) {
    before += det::supervised_loss(init, item.image, item.labels);
    after += det::supervised_loss(a, item.image, item.labels);
  }
  CHECK(after < before);

  TrainConfig zero = tc;
  zero.burn_in = 0;
  const det::ModelState untouched = pretrain_source(task.source, arch, zero);
  CHECK(untouched.params == det::ModelState::init(arch, mix64(tc.seed) ^ 0xA0).params);
}

TEST_CASE("train_step: determinism and teacher isolation") {
  TinyTask task = make_tiny_task(21);
  TrainConfig tc = fast_config(4);
  atk::AttackConfig ac;
  ac.p_attack = 1.0;

  const det::ModelState source_model = pretrain_source(task.source, det::ArchSpec{}, tc);

  auto fresh_state = [&]() {
    TrainState st;
    st.student = source_model;
    st.teacher = source_model;
    st.velocity.assign(source_model.params.size(), 0.0);
    st.seed = tc.seed;
    return st;
  };

  SUBCASE("identical seeds give identical parameter vectors") {
    TrainState s1 = fresh_state(), s2 = fresh_state();
    for (int i = 0; i < 3; ++i) {
      train_step(s1, task.source.items, task.target.images, task.source, task.target, tc, ac);
      train_step(s2, task.source.items, task.target.images, task.source, task.target, tc, ac);
    }
    CHECK(s1.student.params == s2.student.params);
    CHECK(s1.teacher.params == s2.teacher.params);
    CHECK(s1.iteration == 3);
  }

  SUBCASE("beta = 1 freezes the teacher: no gradient path exists") {
    TrainConfig frozen = tc;
    frozen.beta = 1.0;
    TrainState st = fresh_state();
    for (int i = 0; i < 3; ++i)
      train_step(st, task.source.items, task.target.images, task.source, task.target, frozen, ac);
    CHECK(st.teacher.params == source_model.params);
    CHECK(st.student.params != source_model.params);
  }

  SUBCASE("with lambda_t = 0 and no attack, the target branch is inert") {
    TrainConfig inert = tc;
    inert.lambda_t = 0.0;
    atk::AttackConfig no_attack;
    no_attack.p_attack = 0.0;

    TrainState s1 = fresh_state(), s2 = fresh_state();
    // different target data, different zoom settings: the trajectory may not
    // depend on any of it when the target branch carries zero weight
    TrainConfig other = inert;
    other.r_in_min = 1.0;
    other.r_in_max = 1.0;
    other.r_out_min = 1.0;
    other.r_out_max = 1.0;
    other.s_min = 0.0;
    TinyTask alt = make_tiny_task(999);
    for (int i = 0; i < 3; ++i) {
      train_step(s1, task.source.items, task.target.images, task.source, task.target, inert,
                 no_attack);
      train_step(s2, task.source.items, alt.target.images, task.source, alt.target, other,
                 no_attack);
    }
    CHECK(s1.student.params == s2.student.params);
  }
}

TEST_CASE("EMA trajectory matches the closed-form recurrence") {
  TinyTask task = make_tiny_task(31);
  TrainConfig tc = fast_config(6);
  tc.beta = 0.9;
  atk::AttackConfig ac;
  ac.p_attack = 0.5;

  const det::ModelState source_model = pretrain_source(task.source, det::ArchSpec{}, tc);
  TrainState st;
  st.student = source_model;
  st.teacher = source_model;
  st.velocity.assign(source_model.params.size(), 0.0);
  st.seed = tc.seed;

  const std::vector<std::size_t> tracked = {0, 101, 2002, 30003, source_model.params.size() - 1};
  std::vector<std::vector<double>> student_history;  // s_k entering step k
  const int steps = 12;
  for (int k = 0; k < steps; ++k) {
    std::vector<double> s;
    for (std::size_t idx : tracked) s.push_back(st.student.params[idx]);
    student_history.push_back(std::move(s));

    std::vector<float> teacher_before = st.teacher.params;
    train_step(st, task.source.items, task.target.images, task.source, task.target, tc, ac);

    // convexity: each new teacher weight lies between its previous value and
    // the student weight that entered the update
    for (std::size_t t = 0; t < tracked.size(); ++t) {
      const double prev = teacher_before[tracked[t]];
      const double stu = student_history.back()[t];
      const double now = st.teacher.params[tracked[t]];
      CHECK(now >= std::min(prev, stu) - 1e-7);
      CHECK(now <= std::max(prev, stu) + 1e-7);
    }
  }

  for (std::size_t t = 0; t < tracked.size(); ++t) {
    const double theta0 = source_model.params[tracked[t]];
    double closed = std::pow(tc.beta, steps) * theta0;
    for (int k = 0; k < steps; ++k)
      closed += (1.0 - tc.beta) * std::pow(tc.beta, steps - 1 - k) * student_history[k][t];
    CHECK(st.teacher.params[tracked[t]] == doctest::Approx(closed).epsilon(1e-5));
  }
}

TEST_CASE("retained pseudo-labels respect score, size and frame constraints") {
  TinyTask task = make_tiny_task(41);
  TrainConfig tc = fast_config(8);
  tc.burn_in = 300;
  tc.delta = 0.2;
  tc.s_min = 6.0;
  atk::AttackConfig ac;
  ac.p_attack = 1.0;

  const det::ModelState source_model = pretrain_source(task.source, det::ArchSpec{}, tc);
  TrainState st;
  st.student = source_model;
  st.teacher = source_model;
  st.velocity.assign(source_model.params.size(), 0.0);
  st.seed = tc.seed;

  int labels_seen = 0;
  int trace_rose = 0, traces = 0;
  for (int k = 0; k < 10; ++k) {
    StepTrace trace;
    train_step(st, task.source.items, task.target.images, task.source, task.target, tc, ac,
               &trace);
    for (double s : trace.pseudo_scores_prefilter) CHECK(s >= tc.delta);
    const double frame_w = std::lround(48 * trace.r_out);
    for (const LabeledBoxes& l : trace.pseudo_labels) {
      for (const Box& b : l.boxes) {
        CHECK(b.min_side() >= tc.s_min);
        CHECK(b.x_min >= -1e-6);
        CHECK(b.y_min >= -1e-6);
        CHECK(b.x_max <= frame_w + 1e-6);
        CHECK(b.y_max <= frame_w + 1e-6);
        ++labels_seen;
      }
    }
    for (const auto& tr : trace.attack_traces) {
      ++traces;
      if (tr.back() >= tr.front()) ++trace_rose;
    }
  }
  CHECK(labels_seen > 0);  // the teacher does produce confident detections
  REQUIRE(traces > 0);
  CHECK(trace_rose * 2 > traces);  // ascent holds in the majority of attacks
}

TEST_CASE("train: zero iterations returns the source model; resume is exact") {
  TinyTask task = make_tiny_task(61);
  TrainConfig tc = fast_config(12);
  tc.burn_in = 40;
  atk::AttackConfig ac;
  det::ArchSpec arch;

  SUBCASE("t_max_iteration = 0") {
    TrainConfig zero = tc;
    zero.t_max_iteration = 0;
    const TrainResult res = adt::train::train(task.source, task.target, task.target_eval, arch, zero, ac);
    const det::ModelState pre = pretrain_source(task.source, arch, zero);
    CHECK(res.student.params == pre.params);
    CHECK(res.teacher.params == pre.params);
    CHECK(res.history.size() == 1);  // the final evaluation point
  }

  SUBCASE("interrupting and resuming reproduces the uninterrupted run") {
    const fs::path dir = fs::path(ADT_TEST_SCRATCH) / "resume_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    TrainConfig full = tc;
    full.t_max_iteration = 6;
    full.eval_every = 3;
    const TrainResult whole = adt::train::train(task.source, task.target, task.target_eval, arch, full, ac);

    TrainConfig half = full;
    half.t_max_iteration = 3;
    half.checkpoint_every = 3;
    TrainOptions opt;
    opt.checkpoint_dir = (dir / "ckpt").string();
    adt::train::train(task.source, task.target, task.target_eval, arch, half, ac, opt);

    TrainState mid = load_train_state(dir / "ckpt");
    CHECK(mid.iteration == 3);
    TrainOptions resume_opt;
    resume_opt.resume = &mid;
    const TrainResult resumed =
        adt::train::train(task.source, task.target, task.target_eval, arch, full, ac, resume_opt);

    CHECK(resumed.student.params == whole.student.params);
    CHECK(resumed.teacher.params == whole.teacher.params);
    REQUIRE(!resumed.history.empty());
    REQUIRE(!whole.history.empty());
    CHECK(resumed.history.back().map50 == whole.history.back().map50);
  }
}

TEST_CASE("train-state files round-trip") {
  const fs::path dir = fs::path(ADT_TEST_SCRATCH) / "trainstate_roundtrip";
  fs::remove_all(dir);
  TrainState st;
  st.student = tiny_model(3);
  st.teacher = tiny_model(4);
  st.velocity.assign(st.student.params.size(), 0.0);
  st.velocity[5] = -0.125;
  st.iteration = 17;
  st.seed = 99;
  st.history = {{5, 0.25}, {10, 0.5}};
  save_train_state(dir, st);
  const TrainState back = load_train_state(dir);
  CHECK(back.student.params == st.student.params);
  CHECK(back.teacher.params == st.teacher.params);
  CHECK(back.velocity == st.velocity);
  CHECK(back.iteration == 17);
  CHECK(back.seed == 99);
  REQUIRE(back.history.size() == 2);
  CHECK(back.history[1].map50 == 0.5);
}

TEST_CASE("config round-trip and unknown-key rejection") {
  RunSettings s;
  s.train.beta = 0.97;
  s.train.seed = 42;
  s.attack.p_attack = 0.5;
  s.attack.parts = det::LossParts::cls_only;
  const std::string text = settings_to_json(s);
  const RunSettings back = settings_from_json(text);
  CHECK(back.train.beta == 0.97);
  CHECK(back.train.seed == 42);
  CHECK(back.attack.p_attack == 0.5);
  CHECK(back.attack.parts == det::LossParts::cls_only);
  CHECK(settings_to_json(back) == text);

  CHECK_THROWS_AS(settings_from_json("{\"train\":{\"betaa\":0.5}}"), ConfigError);
  CHECK_THROWS_AS(settings_from_json("{\"unrelated\":1}"), ConfigError);
  CHECK_THROWS_AS(settings_from_json("{\"train\":{\"beta\":2.0}}"), ConfigError);
  CHECK_THROWS_AS(settings_from_json("not json"), ConfigError);
}
