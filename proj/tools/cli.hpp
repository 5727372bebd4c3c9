#pragma once

// Subcommand front end for the evps pipeline. Exit codes: 0 success,
// 1 usage error, 2 data error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evps/evps.hpp"

namespace evps::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct UsageError : Error {
  using Error::Error;
};

namespace detail {

inline unsigned parse_threads(const std::string& s) {
  if (s == "auto") return 0;
  try {
    std::size_t used = 0;
    const int n = std::stoi(s, &used);
    if (used == s.size() && n > 0) return static_cast<unsigned>(n);
  } catch (const std::exception&) {
  }
  throw UsageError("--threads expects a positive integer or 'auto', got '" + s + "'");
}

inline std::optional<std::pair<std::uint32_t, std::uint32_t>> parse_crop(const std::string& s) {
  if (s.empty()) return std::nullopt;
  unsigned w = 0, h = 0;
  char x = 0, tail = 0;
  std::istringstream is(s);
  if (!(is >> w >> x >> h) || (x != 'x' && x != 'X') || (is >> tail) || w == 0 || h == 0)
    throw UsageError("--crop expects WIDTHxHEIGHT, got '" + s + "'");
  return std::make_pair(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
}

inline std::string fmt(double v) { return format_double(v); }

inline void echo(const Report& r, const std::string& path) {
  std::cout << r.str();
  if (!path.empty()) r.write(path);
}

inline EventStream load_cycle(const std::string& path, int cycle,
                              const std::optional<std::pair<std::uint32_t, std::uint32_t>>& crop) {
  EventStream s = select_cycle(read_events(path), cycle);
  if (crop) s = center_crop(s, crop->first, crop->second);
  return s;
}

inline void add_trajectory(Report& r, const LightTrajectory& t) {
  r.add_config("trajectory.period", fmt(t.period));
  r.add_config("trajectory.elevation", fmt(t.elevation));
  r.add_config("trajectory.direction", std::to_string(t.direction));
  r.add_config("trajectory.azimuth_offset", fmt(t.azimuth_offset));
}

inline void add_bins(Report& r, const BinnedReport& b) {
  auto& t = r.add_table("bins", {"bin", "lo", "hi", "pixels", "mae_deg"});
  for (const auto& bin : b.bins)
    t.rows.push_back({bin.label(), std::to_string(bin.lo), std::to_string(bin.hi),
                      std::to_string(bin.pixels), bin.mae ? fmt(*bin.mae) : ""});
}

}  // namespace detail

// Parses and runs one command line.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Event-based photometric stereo: simulation, analytic solve, per-pixel MLP"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string threads_flag = "auto";
  app.add_option("--threads", threads_flag, "Worker threads (positive integer or 'auto')");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Render a procedural scene and convert it to events");
  std::string sim_scene = "sphere";
  std::uint64_t sim_seed = 0;
  std::uint32_t sim_width = 128, sim_height = 128;
  bool sim_brdf = false;
  std::optional<double> sim_spec_weight, sim_spec_exp;
  int sim_fpc = 100, sim_cycles = 2;
  double sim_c = 0.2, sim_c_std = 0.02, sim_period = 1.0, sim_elev = kPi / 4.0, sim_az = 0.0;
  double sim_radius = SceneOptions{}.sphere_radius_fraction;
  double sim_tilt_deg = 30.0;
  std::string sim_dir = "ccw", sim_events, sim_gt, sim_csv, sim_report;
  sim->add_option("--scene", sim_scene, "sphere | gaussian-bumps | ramp")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Scene and threshold seed")->capture_default_str();
  sim->add_option("--width", sim_width)->capture_default_str();
  sim->add_option("--height", sim_height)->capture_default_str();
  sim->add_flag("--randomize-brdf", sim_brdf, "Seeded specular lobe per scene");
  sim->add_option("--specular-weight", sim_spec_weight, "Fixed specular weight (with --randomize-brdf)");
  sim->add_option("--specular-exponent", sim_spec_exp, "Fixed specular exponent (with --randomize-brdf)");
  sim->add_option("--sphere-radius", sim_radius, "Sphere radius as a fraction of min(width, height)")
      ->capture_default_str();
  sim->add_option("--ramp-tilt-deg", sim_tilt_deg)->capture_default_str();
  sim->add_option("--frames-per-cycle", sim_fpc)->capture_default_str();
  sim->add_option("--cycles", sim_cycles)->capture_default_str();
  sim->add_option("--threshold", sim_c, "Contrast threshold mean")->capture_default_str();
  sim->add_option("--threshold-std", sim_c_std, "Contrast threshold standard deviation")->capture_default_str();
  sim->add_option("--period", sim_period, "Seconds per rotation")->capture_default_str();
  sim->add_option("--elevation", sim_elev, "Light elevation in radians")->capture_default_str();
  sim->add_option("--direction", sim_dir, "ccw | cw")->capture_default_str();
  sim->add_option("--azimuth-offset", sim_az, "Light azimuth at cycle start, radians")->capture_default_str();
  sim->add_option("--events-out", sim_events, "Event file to write")->required();
  sim->add_option("--gt-out", sim_gt, "Ground-truth normal file to write")->required();
  sim->add_option("--csv-out", sim_csv, "Optional CSV copy of the events");
  sim->add_option("--report", sim_report, "Optional report file echoing the configuration");

  // solve
  auto* solve = app.add_subcommand("solve", "Analytic normal recovery from an event file");
  std::string solve_events, solve_out, solve_crop, solve_report;
  double solve_c = 0.2;
  std::optional<double> solve_elev;
  int solve_m = kDefaultSegments, solve_min = kDefaultMinEvents, solve_cycle = 1;
  solve->add_option("--events", solve_events)->required();
  solve->add_option("--out", solve_out, "Normal file to write")->required();
  solve->add_option("--threshold", solve_c, "Contrast threshold C")->capture_default_str();
  solve->add_option("--elevation", solve_elev, "Light elevation in radians (default: from event file)");
  solve->add_option("--segments", solve_m)->capture_default_str();
  solve->add_option("--min-events", solve_min)->capture_default_str();
  solve->add_option("--cycle", solve_cycle, "Rotation cycle to use (0-based)")->capture_default_str();
  solve->add_option("--crop", solve_crop, "Center crop WIDTHxHEIGHT");
  solve->add_option("--report", solve_report);

  // train
  auto* tr = app.add_subcommand("train", "Train the per-pixel MLP on event/ground-truth pairs");
  std::vector<std::string> tr_events, tr_gt;
  std::string tr_preset = "small", tr_model, tr_history, tr_crop;
  int tr_epochs = 250, tr_batch = 256, tr_m = kDefaultSegments, tr_cycle = 1;
  double tr_lr = 1e-3, tr_holdout = 0.0;
  std::optional<double> tr_dropout;
  std::uint64_t tr_seed = 0;
  bool tr_quiet = false;
  tr->add_option("--events", tr_events, "Event files (repeatable)")->required();
  tr->add_option("--gt", tr_gt, "Ground-truth normal files, one per event file")->required();
  tr->add_option("--preset", tr_preset, "small | paper")->capture_default_str();
  tr->add_option("--epochs", tr_epochs)->capture_default_str();
  tr->add_option("--lr", tr_lr)->capture_default_str();
  tr->add_option("--batch", tr_batch)->capture_default_str();
  tr->add_option("--dropout", tr_dropout, "Override the preset dropout rate");
  tr->add_option("--seed", tr_seed)->capture_default_str();
  tr->add_option("--segments", tr_m)->capture_default_str();
  tr->add_option("--cycle", tr_cycle)->capture_default_str();
  tr->add_option("--crop", tr_crop);
  tr->add_option("--holdout", tr_holdout, "Fraction of scenes held out for validation")->capture_default_str();
  tr->add_option("--model-out", tr_model)->required();
  tr->add_option("--history-out", tr_history, "Loss history report")->required();
  tr->add_flag("--quiet", tr_quiet, "No per-epoch progress");

  // infer
  auto* inf = app.add_subcommand("infer", "Run a trained model on an event file");
  std::string inf_model, inf_events, inf_out, inf_mask, inf_crop, inf_report;
  int inf_cycle = 1;
  inf->add_option("--model", inf_model)->required();
  inf->add_option("--events", inf_events)->required();
  inf->add_option("--out", inf_out)->required();
  inf->add_option("--mask", inf_mask, "Normal file whose valid pixels restrict inference");
  inf->add_option("--cycle", inf_cycle)->capture_default_str();
  inf->add_option("--crop", inf_crop);
  inf->add_option("--report", inf_report);

  // eval
  auto* ev = app.add_subcommand("eval", "Compare predicted and ground-truth normal maps");
  std::string ev_pred, ev_gt, ev_events, ev_report, ev_error;
  int ev_cycle = 1;
  std::uint32_t ev_bin = 2, ev_max = 20;
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--events", ev_events, "Event file for event-count binning");
  ev->add_option("--cycle", ev_cycle)->capture_default_str();
  ev->add_option("--bin-width", ev_bin)->capture_default_str();
  ev->add_option("--max-count", ev_max)->capture_default_str();
  ev->add_option("--report-out", ev_report)->required();
  ev->add_option("--error-out", ev_error, "Optional per-pixel error map file");

  // viz
  auto* viz = app.add_subcommand("viz", "Render a normal or error file to PNG");
  std::string viz_normals, viz_error, viz_out;
  double viz_max = 30.0;
  auto* viz_n_opt = viz->add_option("--normals", viz_normals);
  auto* viz_e_opt = viz->add_option("--error", viz_error);
  viz_n_opt->excludes(viz_e_opt);
  viz->add_option("--max-deg", viz_max, "Error mapped to the hottest color")->capture_default_str();
  viz->add_option("--out", viz_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cout, err);
    return kExitUsage;
  }

  try {
    const unsigned threads = detail::parse_threads(threads_flag);
    const std::string threads_echo = threads_flag;

    if (*sim) {
      if (sim_dir != "ccw" && sim_dir != "cw") throw UsageError("--direction must be ccw or cw");
      SceneOptions so;
      so.sphere_radius_fraction = sim_radius;
      so.ramp_tilt = deg2rad(sim_tilt_deg);
      so.specular_weight = sim_spec_weight;
      so.specular_exponent = sim_spec_exp;
      const LightTrajectory traj{sim_elev, sim_period, sim_dir == "ccw" ? 1 : -1, sim_az};
      const ContrastThresholdModel ct{sim_c, sim_c_std, sim_seed};
      const Scene scene = make_scene(parse_scene_kind(sim_scene), sim_seed, sim_width, sim_height,
                                     sim_brdf, so);
      const FrameSequence frames = render_sequence(scene, traj, sim_fpc, sim_cycles, threads);
      const EventStream stream = simulate_events(frames, ct, threads);
      write_events(stream, sim_events);
      write_normals(scene.gt, sim_gt);
      if (!sim_csv.empty()) export_events_csv(stream, sim_csv);

      Report r;
      r.add_summary("events", std::to_string(stream.events.size()));
      r.add_summary("frames", std::to_string(frames.frame_count()));
      r.add_summary("object_pixels", std::to_string(scene.gt.valid_count()));
      r.add_config("command", "simulate");
      r.add_config("scene", std::string(to_string(scene.kind)));
      r.add_config("seed", std::to_string(sim_seed));
      r.add_config("width", std::to_string(sim_width));
      r.add_config("height", std::to_string(sim_height));
      r.add_config("randomize_brdf", sim_brdf ? "true" : "false");
      r.add_config("specular_weight", sim_spec_weight ? detail::fmt(*sim_spec_weight) : "seeded");
      r.add_config("specular_exponent", sim_spec_exp ? detail::fmt(*sim_spec_exp) : "seeded");
      r.add_config("sphere_radius", detail::fmt(sim_radius));
      r.add_config("ramp_tilt_deg", detail::fmt(sim_tilt_deg));
      r.add_config("frames_per_cycle", std::to_string(sim_fpc));
      r.add_config("cycles", std::to_string(sim_cycles));
      r.add_config("threshold", detail::fmt(sim_c));
      r.add_config("threshold_std", detail::fmt(sim_c_std));
      detail::add_trajectory(r, traj);
      r.add_config("events_out", sim_events);
      r.add_config("gt_out", sim_gt);
      r.add_config("threads", threads_echo);
      detail::echo(r, sim_report);
      return kExitOk;
    }

    if (*solve) {
      const auto crop = detail::parse_crop(solve_crop);
      const EventStream stream = detail::load_cycle(solve_events, solve_cycle, crop);
      const double elev = solve_elev.value_or(stream.trajectory.elevation);
      const AnalyticSolution sol = solve_map(stream, solve_c, elev, solve_m, solve_min, threads);
      write_normals(sol.normals, solve_out);
      Report r;
      r.add_summary("valid_pixels", std::to_string(sol.normals.valid_count()));
      r.add_summary("nonpositive_offset_pixels", std::to_string(sol.nonpositive_count));
      r.add_config("command", "solve");
      r.add_config("events", solve_events);
      r.add_config("threshold", detail::fmt(solve_c));
      r.add_config("elevation", detail::fmt(elev));
      r.add_config("segments", std::to_string(solve_m));
      r.add_config("min_events", std::to_string(solve_min));
      r.add_config("cycle", std::to_string(solve_cycle));
      r.add_config("crop", solve_crop.empty() ? "none" : solve_crop);
      detail::add_trajectory(r, stream.trajectory);
      r.add_config("out", solve_out);
      r.add_config("threads", threads_echo);
      detail::echo(r, solve_report);
      return kExitOk;
    }

    if (*tr) {
      if (tr_events.size() != tr_gt.size())
        throw UsageError("train needs one --gt per --events (got " + std::to_string(tr_events.size()) +
                         " and " + std::to_string(tr_gt.size()) + ")");
      if (!(tr_holdout >= 0.0 && tr_holdout < 1.0)) throw UsageError("--holdout must lie in [0, 1)");
      MlpConfig mc;
      if (tr_preset == "small") mc = MlpConfig::small(tr_m);
      else if (tr_preset == "paper") mc = MlpConfig::paper(tr_m);
      else throw UsageError("--preset must be small or paper");
      if (tr_dropout) mc.dropout = *tr_dropout;
      mc.seed = tr_seed;
      const auto crop = detail::parse_crop(tr_crop);

      const std::size_t scenes = tr_events.size();
      const auto held = static_cast<std::size_t>(std::ceil(tr_holdout * static_cast<double>(scenes)));
      if (held >= scenes && held > 0) throw UsageError("--holdout leaves no training scene");
      Dataset train_set, val_set;
      for (std::size_t i = 0; i < scenes; ++i) {
        const EventStream s = detail::load_cycle(tr_events[i], tr_cycle, crop);
        NormalMap gt = read_normals(tr_gt[i]);
        if (crop) gt = center_crop(gt, crop->first, crop->second);
        if (gt.width != s.width || gt.height != s.height)
          throw DimensionMismatch("ground truth " + tr_gt[i] + " does not match events " + tr_events[i]);
        const Dataset d = build_dataset(s, gt.mask_grid(), tr_m, &gt);
        (i + held >= scenes ? val_set : train_set).append(d);
      }

      TrainConfig tc;
      tc.learning_rate = tr_lr;
      tc.batch_size = tr_batch;
      tc.epochs = tr_epochs;
      tc.seed = tr_seed;
      auto progress = [&](int epoch, double tl, double vl) {
        if (tr_quiet) return;
        std::cerr << "epoch " << epoch + 1 << "/" << tr_epochs << " train_loss " << tl;
        if (!std::isnan(vl)) std::cerr << " validation_loss " << vl;
        std::cerr << '\n';
      };
      const TrainResult res =
          train(init(mc), train_set, tc, val_set.size() > 0 ? &val_set : nullptr, progress);
      write_model(res.model, tr_model);

      Report r;
      r.add_summary("train_samples", std::to_string(train_set.size()));
      r.add_summary("validation_samples", std::to_string(val_set.size()));
      r.add_summary("parameters", std::to_string(res.model.parameter_count()));
      if (!res.history.train_loss.empty())
        r.add_summary("final_train_loss", detail::fmt(res.history.train_loss.back()));
      if (!res.history.validation_loss.empty())
        r.add_summary("final_validation_loss", detail::fmt(res.history.validation_loss.back()));
      auto& t = r.add_table("history", {"epoch", "train_loss", "validation_loss"});
      for (std::size_t e = 0; e < res.history.train_loss.size(); ++e)
        t.rows.push_back({std::to_string(e + 1), detail::fmt(res.history.train_loss[e]),
                          e < res.history.validation_loss.size()
                              ? detail::fmt(res.history.validation_loss[e])
                              : ""});
      r.add_config("command", "train");
      std::string widths;
      for (int w : mc.widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
      r.add_config("preset", tr_preset);
      r.add_config("widths", widths);
      r.add_config("dropout", detail::fmt(mc.dropout));
      r.add_config("epochs", std::to_string(tc.epochs));
      r.add_config("lr", detail::fmt(tc.learning_rate));
      r.add_config("batch", std::to_string(tc.batch_size));
      r.add_config("adam_beta1", detail::fmt(tc.beta1));
      r.add_config("adam_beta2", detail::fmt(tc.beta2));
      r.add_config("adam_epsilon", detail::fmt(tc.epsilon));
      r.add_config("seed", std::to_string(tr_seed));
      r.add_config("segments", std::to_string(tr_m));
      r.add_config("cycle", std::to_string(tr_cycle));
      r.add_config("crop", tr_crop.empty() ? "none" : tr_crop);
      r.add_config("holdout", detail::fmt(tr_holdout));
      for (std::size_t i = 0; i < scenes; ++i) {
        r.add_config("events." + std::to_string(i), tr_events[i]);
        r.add_config("gt." + std::to_string(i), tr_gt[i]);
      }
      r.add_config("model_out", tr_model);
      r.add_config("threads", threads_echo);
      r.write(tr_history);
      return kExitOk;
    }

    if (*inf) {
      const auto crop = detail::parse_crop(inf_crop);
      const Model model = read_model(inf_model);
      const EventStream stream = detail::load_cycle(inf_events, inf_cycle, crop);
      Mask mask(stream.width, stream.height, 1);
      if (!inf_mask.empty()) {
        NormalMap m = read_normals(inf_mask);
        if (crop) m = center_crop(m, crop->first, crop->second);
        if (m.width != stream.width || m.height != stream.height)
          throw DimensionMismatch("mask " + inf_mask + " does not match events " + inf_events);
        mask = m.mask_grid();
      }
      const NormalMap out = infer_map(model, stream, mask, model.input_size(), threads);
      write_normals(out, inf_out);
      Report r;
      r.add_summary("valid_pixels", std::to_string(out.valid_count()));
      r.add_config("command", "infer");
      r.add_config("model", inf_model);
      r.add_config("events", inf_events);
      r.add_config("mask", inf_mask.empty() ? "none" : inf_mask);
      r.add_config("segments", std::to_string(model.input_size()));
      r.add_config("cycle", std::to_string(inf_cycle));
      r.add_config("crop", inf_crop.empty() ? "none" : inf_crop);
      r.add_config("out", inf_out);
      r.add_config("threads", threads_echo);
      detail::echo(r, inf_report);
      return kExitOk;
    }

    if (*ev) {
      const NormalMap pred = read_normals(ev_pred);
      const NormalMap gt = read_normals(ev_gt);
      const ErrorMap em = error_map(pred, gt);
      Report r;
      std::size_t n = 0;
      for (auto v : em.mask) n += v;
      r.add_summary("mae_deg", detail::fmt(mae(pred, gt)));
      r.add_summary("evaluated_pixels", std::to_string(n));
      r.add_summary("pred_valid_pixels", std::to_string(pred.valid_count()));
      r.add_summary("gt_valid_pixels", std::to_string(gt.valid_count()));
      if (!ev_events.empty()) {
        const EventStream s = select_cycle(read_events(ev_events), ev_cycle);
        const BinnedReport b = mae_by_event_count(pred, gt, s, ev_bin, ev_max);
        r.add_summary("binned_pixels", std::to_string(b.total_pixels));
        r.add_summary("binned_mae_deg", detail::fmt(b.overall_mae));
        detail::add_bins(r, b);
      }
      if (!ev_error.empty()) write_error_map(em, ev_error);
      r.add_config("command", "eval");
      r.add_config("pred", ev_pred);
      r.add_config("gt", ev_gt);
      r.add_config("events", ev_events.empty() ? "none" : ev_events);
      r.add_config("cycle", std::to_string(ev_cycle));
      r.add_config("bin_width", std::to_string(ev_bin));
      r.add_config("max_count", std::to_string(ev_max));
      r.add_config("threads", threads_echo);
      detail::echo(r, ev_report);
      return kExitOk;
    }

    if (*viz) {
      if (viz_normals.empty() == viz_error.empty())
        throw UsageError("viz needs exactly one of --normals or --error");
      if (!viz_normals.empty()) write_png(visualize_normals(read_normals(viz_normals)), viz_out);
      else write_png(visualize_error(read_error_map(viz_error), viz_max), viz_out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace evps::cli
