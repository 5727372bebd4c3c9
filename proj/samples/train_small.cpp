// Trains the small per-pixel MLP on two bump scenes for a few epochs and
// evaluates it on a sphere it has never seen.

#include <cstdio>

#include "evps/evps.hpp"

namespace {

evps::EventStream cycle_events(const evps::Scene& scene, std::uint64_t seed) {
  const evps::LightTrajectory traj{};
  const auto frames = evps::render_sequence(scene, traj, 100, 2);
  return evps::select_cycle(evps::simulate_events(frames, evps::ContrastThresholdModel{0.2, 0.02, seed}), 1);
}

}  // namespace

int main() {
  evps::Dataset train;
  for (std::uint64_t seed : {1, 2}) {
    const auto scene = evps::make_scene(evps::SceneKind::gaussian_bumps, seed, 48, 48, false);
    const auto events = cycle_events(scene, seed);
    train.append(evps::build_dataset(events, scene.gt.mask_grid(), evps::kDefaultSegments, &scene.gt));
  }

  evps::TrainConfig tc;
  tc.epochs = 10;
  auto result = evps::train(evps::init(evps::MlpConfig::small()), train, tc, nullptr,
                            [](int epoch, double loss, double) { std::printf("epoch %2d  loss %.5f\n", epoch + 1, loss); });

  const auto sphere = evps::make_scene(evps::SceneKind::sphere, 9, 48, 48, false);
  const auto events = cycle_events(sphere, 9);
  const auto pred = evps::infer_map(result.model, events, sphere.gt.mask_grid(), evps::kDefaultSegments);
  std::printf("sphere MAE (deg): %.3f\n", evps::mae(pred, sphere.gt));
}
