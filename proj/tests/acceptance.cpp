// Acceptance suite. Each criterion prints one PASS/FAIL line; the exit code is
// non-zero if any criterion fails. Run with a criterion number to run just
// that one, e.g. `evps_acceptance 4`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "evps/evps.hpp"
#include "oracles.hpp"

using namespace evps;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Exact exponential contrast of fully lit normals fits and inverts back to
// the normal.
Outcome analytic_roundtrip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const double elev = kPi / 4;
  double worst = 0.0;
  int tested = 0;
  while (tested < 10000) {
    const Normal n = oracle::random_normal(rng, 0.05);
    if (n.z <= 0.05 || oracle::min_shading(n, elev) <= 0.0) continue;
    ++tested;
    const auto s = oracle::exact_series(n, elev, 96);
    const Normal r = normal_from_params(fit_cosine({s.samples, s.phases}), elev);
    worst = std::max(worst, oracle::angle_deg(r, n));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 5.0,
          fmt("normals=%d max_error_deg=%.3e runtime_s=%.2f (need < 1e-6 deg, < 5 s)", tested, worst, secs)};
}

// 2. Every recovered or predicted normal is unit length with nz >= 0.
Outcome unit_norm_positive_z() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_norm = 0.0, min_z = 1.0;
  for (int i = 0; i < 10000; ++i) {
    const CosineParams p{5.0 * u(rng), kTwoPi * u(rng), -3.0 + 6.0 * u(rng)};
    const double elev = 0.02 + (kPi / 2 - 0.04) * u(rng);
    if (p.amplitude == 0.0 && p.offset == 0.0) continue;
    const Normal n = normal_from_params(p, elev);
    worst_norm = std::max(worst_norm, std::abs(n.norm() - 1.0));
    min_z = std::min(min_z, n.z);
  }
  std::uniform_int_distribution<int> count(-6, 6);
  for (int m = 0; m < 100; ++m) {
    MlpConfig cfg{{96, 16, 8, 3}, 0.0, static_cast<std::uint64_t>(m)};
    Model model = init(cfg);
    // Push the raw output around so both signs of z are exercised.
    for (int k = 0; k < 3; ++k) model.biases.back()[k] = -2.0 + 4.0 * u(rng);
    for (int i = 0; i < 10; ++i) {
      std::vector<double> x(96);
      for (double& v : x) v = count(rng);
      const Normal n = forward(model, x);
      worst_norm = std::max(worst_norm, std::abs(n.norm() - 1.0));
      min_z = std::min(min_z, n.z);
    }
  }
  return {worst_norm <= 1e-9 && min_z >= 0.0,
          fmt("samples=11000 max_norm_deviation=%.3e min_nz=%.3e (need <= 1e-9, >= 0)", worst_norm, min_z)};
}

// 3. Signed event sums track the log-intensity change to within one threshold
// at every frame boundary.
Outcome simulator_conservation() {
  const Scene scene = make_scene(SceneKind::sphere, 0, 64, 64, false);
  const FrameSequence fs = render_sequence(scene, LightTrajectory{}, 100, 2);
  const double c = 0.2;
  const EventStream s = simulate_events(fs, {c, 0.0, 0});
  std::vector<std::vector<Event>> by_pixel(fs.pixels());
  for (const Event& e : s.events) by_pixel[e.y * fs.width + e.x].push_back(e);
  double worst = 0.0;
  std::size_t violations = 0;
  for (std::size_t p = 0; p < fs.pixels(); ++p) {
    std::size_t k = 0;
    int acc = 0;
    const double l0 = std::log(fs.at(0, p));
    for (std::size_t f = 0; f <= fs.frame_count(); ++f) {
      const bool closing = f == fs.frame_count();
      const double tf = closing ? fs.duration() : fs.frame_times[f];
      while (k < by_pixel[p].size() && by_pixel[p][k].t <= tf) acc += by_pixel[p][k++].p;
      const double gap = std::abs(c * acc - (std::log(fs.at(closing ? 0 : f, p)) - l0));
      worst = std::max(worst, gap);
      violations += gap >= c;
    }
  }
  return {violations == 0, fmt("events=%zu boundaries=%zu max_gap=%.6f violations=%zu (need gap < %.1f)",
                               s.events.size(), fs.pixels() * (fs.frame_count() + 1), worst, violations, c)};
}

// 4. Finer thresholds give strictly better analytic normals.
Outcome quantization_monotonicity() {
  const auto t0 = Clock::now();
  const Scene scene = make_scene(SceneKind::sphere, 0, 128, 128, false);
  const FrameSequence fs = render_sequence(scene, LightTrajectory{}, 100, 2);
  NormalMap lit = scene.gt;
  for (std::size_t i = 0; i < lit.size(); ++i)
    if (lit.valid(i) && oracle::min_shading(lit.normals[i], kPi / 4) <= 0.0) lit.invalidate(i);
  std::vector<double> maes;
  std::string detail;
  EventStream finest;
  for (double c : {0.02, 0.1, 0.2}) {
    const EventStream ev = select_cycle(simulate_events(fs, {c, 0.0, 0}), 1);
    const AnalyticSolution sol = solve_map(ev, c, kPi / 4, 96, 4);
    maes.push_back(mae(sol.normals, scene.gt));
    detail += fmt("MAE(C=%.2f)=%.3f (lit-only %.3f) ", c, maes.back(), mae(sol.normals, lit));
    if (c == 0.02) finest = ev;
  }
  const double secs = seconds_since(t0);

  // The fit is the least-squares optimum on every checked pixel, so the
  // error floor is a property of the data rather than of the solver.
  std::size_t checked = 0, worse = 0;
  const PixelEventIndex index(finest);
  for (std::size_t p = 0; p < scene.gt.size() && checked < 24; p += 677) {
    if (!scene.gt.valid(p) || index.count(p) < 4) continue;
    const ContrastSeries s =
        contrast_series(polarity_vector(index.at(p), finest.trajectory), 0.02, finest.trajectory);
    const CosineParams fit = fit_cosine(s);
    const oracle::Cosine bf = oracle::brute_force_fit(s.samples, s.phases, 30, 6);
    ++checked;
    worse += oracle::sse(s.samples, s.phases, {fit.amplitude, fit.phase, fit.offset}) >
             oracle::sse(s.samples, s.phases, bf) * (1.0 + 1e-9) + 1e-15;
  }
  detail += fmt("fit_vs_bruteforce_worse=%zu/%zu runtime_s=%.1f (need strictly increasing, MAE(0.02) < 2, < 30 s)",
                worse, checked, secs);
  const bool ok = maes[0] < maes[1] && maes[1] < maes[2] && maes[0] < 2.0 && secs < 30.0 && worse == 0;
  return {ok, detail};
}

// 5. Backpropagated gradients agree with central differences.
Outcome gradient_check() {
  Model model = init({{96, 8, 3}, 0.0, 5});
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> count(-4, 4);
  const int batch = 6;
  Eigen::MatrixXd x(96, batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = count(rng);
  std::vector<Normal> targets;
  for (int i = 0; i < batch; ++i) targets.push_back(oracle::random_normal(rng, 0.1));
  const Gradients g = backward(model, x, targets, 0);
  std::vector<std::size_t> idx(model.parameter_count());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(200);
  double worst = 0.0;
  for (std::size_t k : idx) {
    const double orig = model.parameter(k);
    const double fd = oracle::central_difference(
        [&](double v) {
          model.parameter(k) = v;
          return batch_loss(model, x, targets, Mode::train, 0);
        },
        orig, 1e-5);
    model.parameter(k) = orig;
    const double denom = std::max(std::abs(fd) + std::abs(g.at(k)), 1e-7);
    worst = std::max(worst, std::abs(fd - g.at(k)) / denom);
  }
  return {worst < 1e-3, fmt("parameters=200 max_relative_error=%.3e (need < 1e-3)", worst)};
}

EventStream cycle_events(const Scene& s, std::uint64_t seed) {
  return select_cycle(simulate_events(render_sequence(s, LightTrajectory{}, 100, 2), {0.2, 0.02, seed}), 1);
}

// 6. The small network trained on synthetic scenes generalizes to an unseen
// sphere and beats the analytic solver on a specular one.
Outcome learning_benchmark() {
  const auto t0 = Clock::now();
  Dataset train_set;
  for (int i = 0; i < 8; ++i) {
    const Scene s = make_scene(SceneKind::gaussian_bumps, 100 + i, 128, 128, i % 2 == 1);
    train_set.append(build_dataset(cycle_events(s, 100 + i), s.gt.mask_grid(), 96, &s.gt));
  }
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 256;
  tc.learning_rate = 1e-3;
  const MlpConfig mc = MlpConfig::small();
  const TrainResult r = train(init(mc), train_set, tc);

  const Scene lambert = make_scene(SceneKind::sphere, 9, 128, 128, false);
  const EventStream le = cycle_events(lambert, 9);
  const double nn_lambert = mae(infer_map(r.model, le, lambert.gt.mask_grid()), lambert.gt);

  SceneOptions so;
  so.specular_weight = 0.4;
  so.specular_exponent = 20.0;
  const Scene specular = make_scene(SceneKind::sphere, 11, 128, 128, true, so);
  const EventStream se = cycle_events(specular, 11);
  const double nn_spec = mae(infer_map(r.model, se, specular.gt.mask_grid()), specular.gt);
  const double an_spec = mae(solve_map(se, 0.2, kPi / 4).normals, specular.gt);
  const double secs = seconds_since(t0);
  return {train_set.size() >= 100000 && nn_lambert < 10.0 && nn_spec < an_spec && secs < 900.0,
          fmt("samples=%zu epochs=%d final_loss=%.4f unseen_sphere_mae=%.3f specular_nn_mae=%.3f "
              "specular_analytic_mae=%.3f runtime_s=%.0f (need >= 1e5, < 10, nn < analytic, < 900 s)",
              train_set.size(), tc.epochs, r.history.train_loss.back(), nn_lambert, nn_spec, an_spec, secs)};
}

// 7. Error falls as pixels collect more events, and the bins recombine.
Outcome event_count_trend() {
  const Scene scene = make_scene(SceneKind::sphere, 0, 128, 128, false);
  const EventStream ev = cycle_events(scene, 0);
  const AnalyticSolution sol = solve_map(ev, 0.2, kPi / 4);
  const BinnedReport rep = mae_by_event_count(sol.normals, scene.gt, ev);
  std::vector<double> series;
  std::string bins;
  double weighted = 0.0;
  std::size_t total = 0;
  for (const auto& b : rep.bins) {
    bins += b.label() + "=" + (b.mae ? fmt("%.2f", *b.mae) : std::string("-")) + " ";
    if (!b.mae) continue;
    series.push_back(*b.mae);
    weighted += *b.mae * static_cast<double>(b.pixels);
    total += b.pixels;
  }
  int inversions = 0;
  double largest = 0.0;
  for (std::size_t i = 1; i < series.size(); ++i)
    if (series[i] > series[i - 1]) {
      ++inversions;
      largest = std::max(largest, series[i] - series[i - 1]);
    }
  const double recombination = std::abs(weighted / static_cast<double>(total) - rep.overall_mae);
  const bool ok = series.size() >= 2 && (inversions == 0 || (inversions == 1 && largest < 0.5)) &&
                  recombination <= 1e-9;
  return {ok, fmt("%sinversions=%d largest=%.3f recombination_gap=%.2e (need <= 1 inversion < 0.5, gap <= 1e-9)",
                  bins.c_str(), inversions, largest, recombination)};
}

bool rejects_bad_magic(const std::function<void(std::vector<std::uint8_t>)>& decode,
                       std::vector<std::uint8_t> bytes) {
  bytes[0] ^= 0x20;
  try {
    decode(std::move(bytes));
  } catch (const MalformedFile&) {
    return true;
  }
  return false;
}

// 8. Binary and CSV files read back what was written.
Outcome io_roundtrips() {
  oracle::TempDir dir("accept");
  std::vector<std::string> failed;
  const Scene scene = make_scene(SceneKind::gaussian_bumps, 4, 32, 32, true);
  EventStream ev = simulate_events(render_sequence(scene, LightTrajectory{}, 100, 2), {0.2, 0.02, 4});
  ev.trajectory.azimuth_offset = 0.3;

  write_events(ev, dir.file("e.evt"));
  const EventStream ev_back = read_events(dir.file("e.evt"));
  if (!(ev_back.events == ev.events && ev_back.width == ev.width && ev_back.height == ev.height &&
        ev_back.trajectory == ev.trajectory))
    failed.push_back("events");

  write_normals(scene.gt, dir.file("n.nrm"));
  const NormalMap n_back = read_normals(dir.file("n.nrm"));
  bool normals_ok = n_back.width == scene.gt.width && n_back.height == scene.gt.height;
  for (std::size_t i = 0; normals_ok && i < scene.gt.size(); ++i) {
    normals_ok = n_back.valid(i) == scene.gt.valid(i);
    if (normals_ok && scene.gt.valid(i)) {
      const Normal a = scene.gt.normals[i], b = n_back.normals[i];
      normals_ok = b.x == static_cast<double>(static_cast<float>(a.x)) &&
                   b.y == static_cast<double>(static_cast<float>(a.y)) &&
                   b.z == static_cast<double>(static_cast<float>(a.z));
    }
  }
  if (!normals_ok) failed.push_back("normals");

  const Model model = init(MlpConfig::small());
  write_model(model, dir.file("m.mdl"));
  if (!(read_model(dir.file("m.mdl")) == model)) failed.push_back("model");

  export_events_csv(ev, dir.file("e.csv"));
  const EventStream csv_back = import_events_csv(dir.file("e.csv"), ev.trajectory, std::make_pair(ev.width, ev.height));
  bool csv_ok = csv_back.events.size() == ev.events.size();
  for (std::size_t i = 0; csv_ok && i < ev.events.size(); ++i) {
    const Event &a = ev.events[i], &b = csv_back.events[i];
    csv_ok = std::abs(a.t - b.t) <= 5e-10 && a.x == b.x && a.y == b.y && a.p == b.p;
  }
  if (!csv_ok) failed.push_back("csv");

  if (!rejects_bad_magic([](auto b) { decode_events(std::move(b)); }, encode_events(ev)))
    failed.push_back("events-magic");
  if (!rejects_bad_magic([](auto b) { decode_normals(std::move(b)); }, encode_normals(scene.gt)))
    failed.push_back("normals-magic");
  if (!rejects_bad_magic([](auto b) { decode_model(std::move(b)); }, encode_model(model)))
    failed.push_back("model-magic");

  std::string names;
  for (const auto& f : failed) names += f + " ";
  return {failed.empty(), fmt("events=%zu pixels=%zu parameters=%zu failed=[%s]", ev.events.size(),
                              scene.gt.size(), model.parameter_count(), names.c_str())};
}

std::string bytes_of(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "evps");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink, err;
  std::streambuf* old = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  std::cout.rdbuf(old);
  if (code != 0) std::cerr << err.str();
  return code;
}

// 9. Re-running the pipeline with the same seeds reproduces every output file
// byte for byte.
Outcome determinism() {
  oracle::TempDir dir("accept");
  const auto f = [&](const std::string& name) { return dir.file(name); };
  const std::vector<std::vector<std::string>> commands{
      {"simulate", "--scene", "gaussian-bumps", "--seed", "3", "--width", "48", "--height", "48",
       "--randomize-brdf", "--events-out", f("a.evt"), "--gt-out", f("a.nrm"), "--csv-out", f("a.csv"),
       "--report", f("sim.txt")},
      {"simulate", "--scene", "sphere", "--seed", "4", "--width", "48", "--height", "48", "--events-out",
       f("b.evt"), "--gt-out", f("b.nrm")},
      {"solve", "--events", f("a.evt"), "--out", f("solve.nrm"), "--report", f("solve.txt")},
      {"train", "--events", f("a.evt"), "--gt", f("a.nrm"), "--events", f("b.evt"), "--gt", f("b.nrm"),
       "--epochs", "2", "--seed", "6", "--holdout", "0.5", "--quiet", "--model-out", f("m.mdl"),
       "--history-out", f("hist.txt")},
  };
  const std::vector<std::string> outputs{"a.evt", "a.nrm", "a.csv",  "sim.txt", "b.evt", "b.nrm",
                                         "solve.nrm", "solve.txt", "m.mdl", "hist.txt"};
  std::vector<std::string> first;
  for (int run = 0; run < 2; ++run) {
    for (const auto& cmd : commands)
      if (run_cli(cmd) != 0) return {false, "command failed: " + cmd.front()};
    if (run == 0)
      for (const auto& o : outputs) first.push_back(bytes_of(f(o)));
  }
  std::string differing;
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string again = bytes_of(f(outputs[i]));
    bytes += again.size();
    if (again.empty() || again != first[i]) differing += outputs[i] + " ";
  }
  return {differing.empty(), fmt("files=%zu bytes=%zu differing=[%s]", outputs.size(), bytes, differing.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "analytic roundtrip", analytic_roundtrip},
      {2, "unit norm and z-positivity", unit_norm_positive_z},
      {3, "simulator conservation", simulator_conservation},
      {4, "quantization monotonicity", quantization_monotonicity},
      {5, "gradient check", gradient_check},
      {6, "desk-scale learning benchmark", learning_benchmark},
      {7, "event-count trend", event_count_trend},
      {8, "io roundtrips", io_roundtrips},
      {9, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
