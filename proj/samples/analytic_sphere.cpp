// Simulates a Lambertian sphere under a rotating light and recovers its
// normals in closed form.

#include <cstdio>

#include "evps/evps.hpp"

int main() {
  const evps::LightTrajectory traj{};
  const evps::Scene scene = evps::make_scene(evps::SceneKind::sphere, 7, 64, 64, false);
  const auto frames = evps::render_sequence(scene, traj, 100, 2);
  const auto all = evps::simulate_events(frames, evps::ContrastThresholdModel{0.1, 0.0, 7});
  const auto cycle = evps::select_cycle(all, 1);

  const auto sol = evps::solve_map(cycle, 0.1, traj.elevation);
  std::printf("events in cycle: %zu\n", cycle.events.size());
  std::printf("solved pixels:   %zu\n", sol.normals.valid_count());
  std::printf("MAE (deg):       %.3f\n", evps::mae(sol.normals, scene.gt));
  evps::write_png(evps::visualize_normals(sol.normals), "analytic_sphere.png");
}
