// vimat — assembly-task monitoring from multi-view detection streams.
//
// Subcommands:
//   validate   parse a task file and check the goal is reachable
//   plan       build the state graph, enumerate plans, export DOT
//   simulate   produce a synthetic detection log + ground-truth CSV
//   monitor    run the pipeline on a live socket or a recorded log
//   replay     run the pipeline on a recorded log at recorded pacing
//   eval       precision/recall of a timeline against ground truth
//
// Exit codes: 0 success, 1 invalid inputs, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "vimat/vimat.hpp"

namespace {

struct SharedOptions {
  double sigma = 0.5;
  double stay_prob = 0.8;
  double radius = vimat::kDefaultRadius;
  double iou_thresh = vimat::kDefaultIouThresh;
  double alpha_up = vimat::kDefaultAlphaUp;
  double alpha_down = vimat::kDefaultAlphaDown;
  bool no_smoothing = false;
  std::uint64_t sync_window_us = vimat::kDefaultSyncWindowUs;
  double warning_threshold = 0.3;
  int warning_window = 15;
  std::string norm = "l2";
  std::string work_tray = "T_work";

  vimat::PipelineConfig pipeline() const {
    vimat::PipelineConfig cfg;
    cfg.stay_prob = stay_prob;
    cfg.radius = radius;
    cfg.iou_thresh = iou_thresh;
    cfg.alpha_up = alpha_up;
    cfg.alpha_down = alpha_down;
    cfg.smoothing = !no_smoothing;
    cfg.reasoner.sigma = sigma;
    cfg.reasoner.norm = norm == "l1" ? vimat::ReasonerOptions::Norm::L1
                                     : vimat::ReasonerOptions::Norm::L2;
    cfg.reasoner.work_tray = work_tray;
    cfg.reasoner.warning_threshold = warning_threshold;
    cfg.reasoner.warning_window = warning_window;
    return cfg;
  }
};

void add_shared_options(CLI::App& app, SharedOptions& o) {
  app.add_option("--sigma", o.sigma, "Observation likelihood scale")->check(CLI::PositiveNumber);
  app.add_option("--stay-prob", o.stay_prob, "Transition self-loop probability")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  app.add_option("--radius,-r", o.radius, "Cloud intersection radius, meters")
      ->check(CLI::PositiveNumber);
  app.add_option("--iou-thresh", o.iou_thresh, "Cross-view match threshold")
      ->check(CLI::Range(1e-9, 1.0));
  app.add_option("--alpha-up", o.alpha_up, "Smoothing weight, rising entries")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--alpha-down", o.alpha_down, "Smoothing weight, falling entries")
      ->check(CLI::Range(0.0, 1.0));
  app.add_flag("--no-smoothing", o.no_smoothing, "Feed raw observations to the reasoner");
  app.add_option("--sync-window-us", o.sync_window_us, "Bundle synchronization window")
      ->envname("VIMAT_SYNC_WINDOW_US")
      ->check(CLI::PositiveNumber);
  app.add_option("--warning-threshold", o.warning_threshold, "Deviation belief threshold")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  app.add_option("--warning-window", o.warning_window,
                 "Consecutive low-belief frames before a warning")
      ->check(CLI::PositiveNumber);
  app.add_option("--norm", o.norm, "Residual norm in the likelihood (l2 or l1)")
      ->check(CLI::IsMember({"l1", "l2"}));
  app.add_option("--work-tray", o.work_tray, "Tray name standing in for mounted elements");
}

int cmd_validate(const std::string& task_path, bool quiet) {
  auto result = vimat::load_task_file(task_path);
  if (!result.ok()) {
    for (const auto& d : result.diagnostics)
      std::cerr << task_path << ":" << d.to_string() << "\n";
    return 1;
  }
  const auto& task = *result.task;
  vimat::StateGraph g = vimat::build_state_graph(task);  // throws if goal unreachable
  if (!quiet) {
    std::cout << "task ok: " << task.objects.size() << " objects, "
              << task.predicate_schemas.size() << " predicates, " << task.steps.size()
              << " steps\n";
    std::cout << "graph ok: " << g.nodes.size() << " states, " << g.edges.size()
              << " transitions, final state " << g.final_index << "\n";
  }
  return 0;
}

int cmd_plan(const std::string& task_path, const std::string& dot_path,
             const std::string& dump_path, double stay_prob, std::size_t max_plans, bool list) {
  vimat::TaskDefinition task = vimat::load_task_or_throw(task_path);
  vimat::StateGraph g = vimat::build_state_graph(task);
  vimat::TransitionMatrix tm = vimat::transition_matrix(g, stay_prob);
  auto plans = vimat::enumerate_plans(g, max_plans);

  std::cout << "states: " << g.nodes.size() << "\n";
  std::cout << "transitions: " << g.edges.size() << "\n";
  std::cout << "final state: " << g.final_index << "\n";
  std::cout << "plans: " << plans.size() << (plans.size() >= max_plans ? "+" : "") << "\n";
  std::cout << "stay probability: " << tm.stay_prob << "\n";
  if (list) {
    for (std::size_t i = 0; i < plans.size(); ++i) {
      std::cout << "plan " << i << ":";
      for (std::size_t s : plans[i]) std::cout << " [" << task.steps[s].name << "]";
      std::cout << "\n";
    }
  }
  if (!dot_path.empty()) {
    std::ofstream out(dot_path, std::ios::binary);
    if (!out) throw vimat::Error("cannot write DOT file: " + dot_path);
    out << vimat::to_dot(g, task);
    std::cout << "dot graph written to " << dot_path << "\n";
  }
  if (!dump_path.empty()) {
    std::ofstream out(dump_path, std::ios::binary);
    if (!out) throw vimat::Error("cannot write dump file: " + dump_path);
    out << vimat::dump_state_graph(g, task);
    std::cout << "state dump written to " << dump_path << "\n";
  }
  return 0;
}

struct SimulateArgs {
  std::string task_path;
  std::string out_path;
  std::string gt_path;
  std::string calib_out;
  std::string trays_out;
  std::uint64_t seed = 1;
  std::size_t frames_per_step = 90;
  std::size_t duration_jitter = 30;
  double dropout = 0.0;
  double confidence_jitter = 0.0;
  double base_confidence = 1.0;
  double position_jitter = 0.0;
  double confusion = 0.0;
  long long plan_index = -1;  // -1 = sample uniformly
};

int cmd_simulate(const SimulateArgs& a) {
  vimat::TaskDefinition task = vimat::load_task_or_throw(a.task_path);
  vimat::StateGraph g = vimat::build_state_graph(task);
  auto rig = vimat::default_rig();
  auto trays = vimat::default_tray_layout();

  vimat::NoiseModel noise;
  noise.seed = a.seed;
  noise.dropout_prob = a.dropout;
  noise.confidence_jitter = a.confidence_jitter;
  noise.base_confidence = a.base_confidence;
  noise.position_jitter = a.position_jitter;
  if (a.confusion > 0)
    noise.confusion = vimat::similar_confusion(task.element_names(), a.confusion);

  vimat::SimulationOptions opts;
  opts.frames_per_step = a.frames_per_step;
  opts.duration_jitter = a.duration_jitter;

  std::mt19937_64 plan_rng(a.seed);
  std::vector<std::size_t> plan;
  if (a.plan_index >= 0) {
    auto plans = vimat::enumerate_plans(g, static_cast<std::size_t>(a.plan_index) + 1);
    if (static_cast<std::size_t>(a.plan_index) >= plans.size())
      throw vimat::ValidationError("plan index out of range");
    plan = plans[static_cast<std::size_t>(a.plan_index)];
  } else {
    plan = vimat::sample_plan(g, plan_rng);
  }

  vimat::DetlogWriter writer(a.out_path);
  std::size_t messages = 0;
  auto timeline = vimat::simulate(plan, g, task, rig, trays, noise, opts,
                                  [&](const vimat::DetectionMessage& m) {
                                    writer.write(m);
                                    ++messages;
                                  });
  writer.close();
  vimat::write_ground_truth_csv(a.gt_path, timeline);

  if (!a.calib_out.empty()) {
    std::vector<vimat::CameraCalibration> cals;
    for (const auto& c : rig) cals.push_back(c.calib);
    vimat::write_calibration_file(a.calib_out, cals);
  }
  if (!a.trays_out.empty())
    vimat::write_tray_regions_file(a.trays_out, vimat::project_tray_regions(rig, trays));

  std::cout << "plan length: " << plan.size() << " steps\n";
  std::cout << "frames: " << timeline.frames() << "\n";
  std::cout << "messages: " << messages << "\n";
  std::cout << "detection log: " << a.out_path << "\n";
  std::cout << "ground truth: " << a.gt_path << "\n";
  return 0;
}

struct MonitorArgs {
  std::string task_path;
  std::string calib_path;
  std::string trays_path;
  std::string listen;  // host:port
  std::string log_path;
  std::string timeline_path;
  double speed = 0.0;  // replay pacing; 0 = as fast as possible
};

int run_pipeline(const MonitorArgs& a, const SharedOptions& shared) {
  vimat::TaskDefinition task = vimat::load_task_or_throw(a.task_path);
  auto calibrations = vimat::read_calibration_file(a.calib_path);
  auto regions = vimat::read_tray_regions_file(a.trays_path);
  vimat::MonitorPipeline pipeline(task, calibrations, regions, shared.pipeline());

  auto handle = [&](const vimat::FrameBundle& bundle) {
    vimat::TimelineRow row = pipeline.process(bundle);
    if (row.warning)
      std::cerr << "warning: frame " << row.frame
                << ": belief dispersed, best state " << row.map_state << " (p="
                << row.belief << ")\n";
  };

  vimat::IngestStats stats;
  if (!a.log_path.empty()) {
    stats = vimat::replay(a.log_path, pipeline.camera_ids(), handle, shared.sync_window_us,
                          a.speed);
  } else {
    auto colon = a.listen.rfind(':');
    if (colon == std::string::npos)
      throw vimat::ConfigError("--listen expects host:port, got '" + a.listen + "'");
    std::string host = a.listen.substr(0, colon);
    int port = std::stoi(a.listen.substr(colon + 1));
    if (port < 0 || port > 65535) throw vimat::ConfigError("port out of range");
    vimat::DetectionServer server(host, static_cast<std::uint16_t>(port),
                                  pipeline.camera_ids(), shared.sync_window_us);
    std::cerr << "listening on " << host << ":" << server.port() << "\n";
    while (auto bundle = server.next_bundle()) handle(*bundle);
    stats = server.stats();
  }

  if (!a.timeline_path.empty()) vimat::write_timeline_csv(a.timeline_path, pipeline.timeline());

  std::cout << "frames: " << pipeline.timeline().size() << "\n";
  std::cout << "messages: " << stats.messages << "\n";
  std::cout << "partial bundles: " << stats.partial_bundles << "\n";
  std::cout << "late dropped: " << stats.late_dropped << "\n";
  std::cout << "warnings: " << pipeline.warnings().size() << "\n";
  if (!pipeline.timeline().empty()) {
    const auto& last = pipeline.timeline().back();
    std::cout << "final state: " << last.map_state << " (belief " << last.belief << ")\n";
    std::cout << "goal reached: "
              << (last.map_state == pipeline.graph().final_index ? "yes" : "no") << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& timeline_path, const std::string& gt_path, std::size_t tol,
             std::size_t boundary_tol, bool per_frame) {
  auto rows = vimat::read_timeline_csv(timeline_path);
  auto gt = vimat::read_ground_truth_csv(gt_path);
  std::vector<std::size_t> predicted;
  predicted.reserve(rows.size());
  for (const auto& r : rows) predicted.push_back(r.map_state);
  vimat::TimelineComparison cmp = vimat::evaluate(predicted, gt, tol, boundary_tol);
  std::cout.precision(6);
  std::cout << "frames: " << cmp.per_frame.size() << "\n";
  std::cout << "precision: " << cmp.precision << "\n";
  std::cout << "recall: " << cmp.recall << "\n";
  if (per_frame) {
    for (const auto& f : cmp.per_frame)
      std::cout << f.frame << " pred=" << f.predicted_state << " gt=" << f.gt_state << " "
                << (f.match ? "match" : "MISS") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-time monitoring of assembly tasks from multi-view detections"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read default options from a file");

  SharedOptions shared;
  add_shared_options(app, shared);

  // validate
  auto* validate = app.add_subcommand("validate", "Check a task definition file");
  std::string v_task;
  bool v_quiet = false;
  validate->add_option("--task", v_task, "Task definition file")->required();
  validate->add_flag("--quiet,-q", v_quiet, "No output, exit status only");

  // plan
  auto* plan = app.add_subcommand("plan", "Build and export the state graph");
  std::string p_task, p_dot, p_dump;
  std::size_t p_max_plans = 10000;
  bool p_list = false;
  plan->add_option("--task", p_task, "Task definition file")->required();
  plan->add_option("--dot", p_dot, "Write the graph in DOT format");
  plan->add_option("--dump", p_dump, "Write a per-node predicate dump");
  plan->add_option("--max-plans", p_max_plans, "Enumeration cap");
  plan->add_flag("--list", p_list, "List enumerated plans");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic detection log");
  SimulateArgs sa;
  sim->add_option("--task", sa.task_path, "Task definition file")->required();
  sim->add_option("--out", sa.out_path, "Output detection log (.detlog)")->required();
  sim->add_option("--gt", sa.gt_path, "Output ground-truth CSV")->required();
  sim->add_option("--seed", sa.seed, "RNG seed");
  sim->add_option("--frames-per-step", sa.frames_per_step, "Mean frames per step")
      ->check(CLI::PositiveNumber);
  sim->add_option("--duration-jitter", sa.duration_jitter, "Uniform +- frames per step");
  sim->add_option("--dropout", sa.dropout, "Per-detection miss probability")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--confidence-jitter", sa.confidence_jitter, "Confidence noise stddev")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--base-confidence", sa.base_confidence, "Mean detection confidence")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--position-jitter", sa.position_jitter, "3D jitter stddev, meters")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--confusion", sa.confusion, "Similar-class confusion probability")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--plan-index", sa.plan_index, "Execute a specific enumerated plan");
  sim->add_option("--calib-out", sa.calib_out, "Also write the camera calibration file");
  sim->add_option("--trays-out", sa.trays_out, "Also write the tray-region file");

  // monitor
  auto* mon = app.add_subcommand("monitor", "Run the monitoring pipeline");
  MonitorArgs ma;
  mon->add_option("--task", ma.task_path, "Task definition file")->required();
  mon->add_option("--calib", ma.calib_path, "Camera calibration file")->required();
  mon->add_option("--trays", ma.trays_path, "Tray-region file")->required();
  auto* listen_opt = mon->add_option("--listen", ma.listen, "TCP listen address (host:port)");
  auto* log_opt = mon->add_option("--log", ma.log_path, "Recorded detection log");
  listen_opt->excludes(log_opt);
  mon->add_option("--timeline", ma.timeline_path, "Write the per-frame timeline CSV");

  // replay
  auto* rep = app.add_subcommand("replay", "Replay a recorded log at recorded pacing");
  MonitorArgs ra;
  ra.speed = 1.0;
  rep->add_option("--log", ra.log_path, "Recorded detection log")->required();
  rep->add_option("--task", ra.task_path, "Task definition file")->required();
  rep->add_option("--calib", ra.calib_path, "Camera calibration file")->required();
  rep->add_option("--trays", ra.trays_path, "Tray-region file")->required();
  rep->add_option("--speed", ra.speed, "Pacing multiplier (0 = as fast as possible)")
      ->check(CLI::NonNegativeNumber);
  rep->add_option("--timeline", ra.timeline_path, "Write the per-frame timeline CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Compare a timeline against ground truth");
  std::string e_timeline, e_gt;
  std::size_t e_tol = 0, e_boundary = 0;
  bool e_per_frame = false;
  ev->add_option("--timeline", e_timeline, "Predicted timeline CSV")->required();
  ev->add_option("--gt", e_gt, "Ground-truth CSV")->required();
  ev->add_option("--tol", e_tol, "Frame matching tolerance");
  ev->add_option("--boundary-tol", e_boundary, "Segment-adjacency tolerance");
  ev->add_flag("--per-frame", e_per_frame, "Dump per-frame comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (validate->parsed()) return cmd_validate(v_task, v_quiet);
    if (plan->parsed()) return cmd_plan(p_task, p_dot, p_dump, shared.stay_prob, p_max_plans, p_list);
    if (sim->parsed()) return cmd_simulate(sa);
    if (mon->parsed()) {
      if (ma.listen.empty() == ma.log_path.empty())
        throw vimat::ConfigError("monitor needs exactly one of --listen or --log");
      return run_pipeline(ma, shared);
    }
    if (rep->parsed()) return run_pipeline(ra, shared);
    if (ev->parsed()) return cmd_eval(e_timeline, e_gt, e_tol, e_boundary, e_per_frame);
  } catch (const vimat::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
