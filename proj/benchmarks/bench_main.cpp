#include <benchmark/benchmark.h>

#include "adt/attack.hpp"
#include "adt/detector.hpp"
#include "adt/evaluation.hpp"
#include "adt/geometry.hpp"
#include "adt/rng.hpp"
#include "adt/synthdata.hpp"
#include "adt/trainer.hpp"

using namespace adt;

namespace {

synth::SceneRender scene96() {
  synth::SceneSpec spec;
  spec.seed = 12;
  spec.object_count = 5;
  return synth::generate_scene(spec);
}

det::ModelState model96() { return det::ModelState::init(det::ArchSpec{}, 7); }

void BM_GenerateScene(benchmark::State& state) {
  synth::SceneSpec spec;
  spec.object_count = 5;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    spec.seed = ++seed;
    benchmark::DoNotOptimize(synth::generate_scene(spec));
  }
}
BENCHMARK(BM_GenerateScene);

void BM_Forward96(benchmark::State& state) {
  const synth::SceneRender scene = scene96();
  const det::ModelState model = model96();
  for (auto _ : state) benchmark::DoNotOptimize(det::forward(model, scene.image));
}
BENCHMARK(BM_Forward96);

void BM_SupervisedGradients96(benchmark::State& state) {
  const synth::SceneRender scene = scene96();
  const det::ModelState model = model96();
  const det::LossSpec spec{scene.labels};
  for (auto _ : state)
    benchmark::DoNotOptimize(det::loss_gradients(model, scene.image, spec, true, false));
}
BENCHMARK(BM_SupervisedGradients96);

void BM_PgdThreeSteps(benchmark::State& state) {
  const synth::SceneRender scene = scene96();
  const det::ModelState model = model96();
  atk::AttackConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(atk::pgd(model, scene.image, scene.labels, cfg));
}
BENCHMARK(BM_PgdThreeSteps);

void BM_Detect96(benchmark::State& state) {
  const synth::SceneRender scene = scene96();
  const det::ModelState model = model96();
  for (auto _ : state) benchmark::DoNotOptimize(det::detect(model, scene.image, 0.05, 0.5));
}
BENCHMARK(BM_Detect96);

void BM_Nms100(benchmark::State& state) {
  Rng rng(4);
  LabeledBoxes boxes;
  for (int i = 0; i < 100; ++i) {
    const double x0 = rng.uniform(0, 80), y0 = rng.uniform(0, 80);
    boxes.push_back({x0, y0, x0 + rng.uniform(4, 16), y0 + rng.uniform(4, 16)},
                    rng.uniform_int(0, 4), rng.uniform());
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, 0.5));
}
BENCHMARK(BM_Nms100);

void BM_EmaUpdate(benchmark::State& state) {
  const det::ModelState teacher = model96();
  const det::ModelState student = det::ModelState::init(det::ArchSpec{}, 8);
  for (auto _ : state)
    benchmark::DoNotOptimize(train::ema_update(teacher, student, 0.9996));
}
BENCHMARK(BM_EmaUpdate);

void BM_ApAtIou(benchmark::State& state) {
  Rng rng(11);
  std::vector<LabeledBoxes> dets(20), gts(20);
  for (int i = 0; i < 20; ++i) {
    for (int g = 0; g < 5; ++g) {
      const double x0 = rng.uniform(0, 70), y0 = rng.uniform(0, 70);
      gts[i].push_back({x0, y0, x0 + 15, y0 + 15}, rng.uniform_int(0, 4));
    }
    for (int d = 0; d < 8; ++d) {
      const double x0 = rng.uniform(0, 70), y0 = rng.uniform(0, 70);
      dets[i].push_back({x0, y0, x0 + 15, y0 + 15}, rng.uniform_int(0, 4), rng.uniform());
    }
  }
  for (auto _ : state)
    for (int k = 0; k < 5; ++k) benchmark::DoNotOptimize(eval::ap_at_iou(dets, gts, k, 0.5));
}
BENCHMARK(BM_ApAtIou);

}  // namespace

BENCHMARK_MAIN();
