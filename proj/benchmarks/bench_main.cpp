// Copyright 2026 The thermofield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "thermofield/dataset.hpp"
#include "thermofield/encodings.hpp"
#include "thermofield/rendering.hpp"
#include "thermofield/trainer.hpp"

namespace fs = std::filesystem;
using namespace thermofield;

namespace {

// Small scene shared by the training and rendering benchmarks.
const SceneDataset& bench_scene() {
  static const SceneDataset data = [] {
    SynthSceneSpec spec = SynthSceneSpec::preset("hot-sphere");
    spec.num_cameras = 8;
    spec.width = spec.height = 32;
    spec.supersample = 1;
    const fs::path dir = fs::temp_directory_path() / "thermofield_bench_scene";
    fs::remove_all(dir);
    generate_synthetic_scene(spec, dir, 1);
    return load_scene(dir);
  }();
  return data;
}

TrainConfig bench_config(FieldMode mode) {
  TrainConfig c = TrainConfig::preset("synth-small");
  c.field.mode = mode;
  c.iterations = 1000000;
  return c;
}

void BM_HashEncode(benchmark::State& state) {
  const HashGridLayout layout(HashGridConfig{16, 16, 1024, 2, static_cast<int>(state.range(0))});
  std::vector<float> table(layout.parameter_count());
  std::mt19937_64 rng(1);
  init_hash_table<float>(table, rng);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<std::array<float, 3>> pts(4096);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  std::vector<float> out(layout.config().output_dim());
  for (auto _ : state) {
    for (const auto& p : pts) {
      hash_encode<float>(layout, table, std::span<const float, 3>(p), out);
      benchmark::DoNotOptimize(out.data());
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_HashEncode)->Arg(15)->Arg(19);

void BM_TrainStep(benchmark::State& state) {
  Trainer t(bench_scene(), bench_config(static_cast<FieldMode>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(t.step());
  state.SetItemsProcessed(state.iterations() * t.config().rays_per_batch);
  state.SetLabel(std::string(field_mode_name(t.config().field.mode)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(FieldMode::Thermo))
    ->Arg(static_cast<int>(FieldMode::Concat4))
    ->Unit(benchmark::kMillisecond);

void BM_RenderView(benchmark::State& state) {
  const SceneDataset& data = bench_scene();
  const TrainConfig c = bench_config(FieldMode::Thermo);
  Trainer t(data, c);
  const NeuralField<float> field(t.model());
  RenderOptions ro;
  ro.sampler = c.sampler;
  const Camera& cam = data.frames.front().camera;
  for (auto _ : state) benchmark::DoNotOptimize(render_view(field, cam, ro));
  state.SetItemsProcessed(state.iterations() * cam.width * cam.height);
}
BENCHMARK(BM_RenderView)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
