// adt: command-line front end for the adversarial-defense teacher pipeline.
//
// Subcommands: gen-data, train, eval, attack-demo, plot.
// Exit codes: 0 success, 2 configuration error, 3 runtime/numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adt/attack.hpp"
#include "adt/config_io.hpp"
#include "adt/detector.hpp"
#include "adt/evaluation.hpp"
#include "adt/plot.hpp"
#include "adt/synthdata.hpp"
#include "adt/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_out_root() {
  const char* env = std::getenv("ADT_OUTPUT_ROOT");
  return env ? env : ".";
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw adt::ConfigError("expected a comma-separated list, got '" + text + "'");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  if (out.empty()) throw adt::ConfigError("expected a comma-separated seed list");
  return out;
}

void write_detections(const fs::path& path, const adt::LabeledBoxes& dets) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f.precision(6);
  f << std::fixed;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const adt::Box& b = dets.boxes[i];
    f << dets.classes[i] << " " << b.x_min << " " << b.y_min << " " << b.x_max << " " << b.y_max;
    if (dets.scores) f << " " << (*dets.scores)[i];
    f << "\n";
  }
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  adt::synth::DatasetConfig cfg;
  bool small_objects = false;
};

int cmd_gen_data(const GenDataArgs& args) {
  adt::synth::DatasetConfig cfg = args.cfg;
  if (args.small_objects) {
    cfg.min_size = 5.0;
    cfg.max_size = 16.0;
  }
  const auto manifests = adt::synth::generate_dataset(args.out, cfg);
  std::ostringstream counts;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    if (i) counts << " ";
    counts << manifests[i].split << "=" << manifests[i].entries.size();
  }
  std::cout << "dataset written to " << args.out << "\n" << counts.str() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config_path;
  std::string resume_dir;
  std::string source_model_path;
  std::string sweep;  // e.g. "0,0.5,1.0"
  std::string seeds;  // e.g. "1,2,3"; sweep mode only
  bool no_ad = false;
  bool no_zz = false;
  std::optional<double> p_attack;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<int> burn_in;
  std::optional<double> lr;
  std::optional<double> beta;
  std::optional<double> delta;
  std::optional<int> batch;
  std::optional<int> eval_every;
  std::optional<int> checkpoint_every;
};

adt::RunSettings resolve_settings(const TrainArgs& args) {
  adt::RunSettings s;
  if (!args.config_path.empty()) s = adt::load_settings(args.config_path);
  if (args.seed) s.train.seed = *args.seed;
  if (args.iters) s.train.t_max_iteration = *args.iters;
  if (args.burn_in) s.train.burn_in = *args.burn_in;
  if (args.lr) s.train.lr = *args.lr;
  if (args.beta) s.train.beta = *args.beta;
  if (args.delta) s.train.delta = *args.delta;
  if (args.batch) s.train.batch_size = *args.batch;
  if (args.eval_every) s.train.eval_every = *args.eval_every;
  if (args.checkpoint_every) s.train.checkpoint_every = *args.checkpoint_every;
  if (args.p_attack) s.attack.p_attack = *args.p_attack;
  if (args.no_ad) s.attack.p_attack = 0.0;
  if (args.no_zz) {
    s.train.r_in_min = s.train.r_in_max = 1.0;
    s.train.r_out_min = s.train.r_out_max = 1.0;
    s.train.s_min = 0.0;
  }
  try {
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw adt::ConfigError(e.what());
  }
  return s;
}

struct LoadedData {
  adt::train::SourceDataset source;
  adt::train::TargetDataset target;
  std::vector<adt::train::LabeledImage> target_eval;
};

LoadedData load_training_data(const fs::path& data_dir) {
  LoadedData d;
  d.source = adt::train::load_labeled_dataset(data_dir / "source_train.manifest");
  d.target = adt::train::load_unlabeled_dataset(data_dir / "target_train.manifest");
  d.target_eval = adt::train::load_eval_dataset(data_dir / "target_eval.manifest");
  return d;
}

int cmd_train(const TrainArgs& args) {
  const adt::RunSettings base = resolve_settings(args);
  const fs::path data_dir(args.data);
  const fs::path out_dir(args.out);
  if (!fs::exists(data_dir / "source_train.manifest"))
    throw adt::ConfigError("no dataset at " + data_dir.string());
  fs::create_directories(out_dir);
  adt::save_settings((out_dir / "config.json").string(), base);

  const LoadedData d = load_training_data(data_dir);
  const adt::det::ArchSpec arch;  // default desk-scale architecture

  std::optional<adt::det::ModelState> source_model;
  if (!args.source_model_path.empty())
    source_model = adt::det::load_checkpoint(args.source_model_path).state;

  if (!args.sweep.empty()) {
    // one preset runs the whole attack-probability sweep, re-using the
    // pretrained source model per seed so arms differ only in p_attack
    const std::vector<double> arms = parse_double_list(args.sweep);
    const std::vector<std::uint64_t> seeds =
        args.seeds.empty() ? std::vector<std::uint64_t>{base.train.seed}
                           : parse_seed_list(args.seeds);
    json summary;
    summary["arms"] = json::array();
    std::vector<json> arm_records(arms.size());
    for (std::size_t a = 0; a < arms.size(); ++a) {
      arm_records[a]["p_attack"] = arms[a];
      arm_records[a]["per_seed"] = json::array();
    }
    for (std::uint64_t seed : seeds) {
      adt::RunSettings s = base;
      s.train.seed = seed;
      adt::det::ModelState pre =
          source_model ? *source_model
                       : adt::train::pretrain_source(d.source, arch, s.train, nullptr,
                                                     out_dir.string());
      for (std::size_t a = 0; a < arms.size(); ++a) {
        adt::RunSettings arm = s;
        arm.attack.p_attack = arms[a];
        std::ostringstream name;
        name << "p" << arms[a] << "_seed" << seed;
        adt::train::TrainOptions opt;
        opt.source_model = &pre;
        opt.metrics_path = (out_dir / ("metrics_" + name.str() + ".jsonl")).string();
        adt::train::TrainResult res =
            adt::train::train(d.source, d.target, d.target_eval, arch, arm.train, arm.attack, opt);
        const double final_map = res.history.empty() ? 0.0 : res.history.back().map50;
        arm_records[a]["per_seed"].push_back({{"seed", seed}, {"map50", final_map}});
        std::cout << "arm p_attack=" << arms[a] << " seed=" << seed << " map50=" << final_map
                  << "\n";
      }
    }
    for (std::size_t a = 0; a < arms.size(); ++a) {
      double sum = 0.0;
      for (const auto& r : arm_records[a]["per_seed"]) sum += r.at("map50").get<double>();
      arm_records[a]["map50_mean"] = sum / arm_records[a]["per_seed"].size();
      summary["arms"].push_back(arm_records[a]);
    }
    std::ofstream f(out_dir / "sweep_summary.json");
    f << summary.dump(2) << "\n";
    std::cout << "sweep summary written to " << (out_dir / "sweep_summary.json") << "\n";
    return 0;
  }

  adt::train::TrainOptions opt;
  opt.metrics_path = (out_dir / "metrics.jsonl").string();
  opt.checkpoint_dir = (out_dir / "checkpoints").string();
  adt::train::TrainState resume_state;
  if (!args.resume_dir.empty()) {
    resume_state = adt::train::load_train_state(args.resume_dir);
    opt.resume = &resume_state;
  }
  if (source_model) opt.source_model = &*source_model;

  adt::train::TrainResult res =
      adt::train::train(d.source, d.target, d.target_eval, arch, base.train, base.attack, opt);
  adt::det::save_checkpoint((out_dir / "student.ckpt").string(), res.student,
                            base.train.t_max_iteration);
  adt::det::save_checkpoint((out_dir / "teacher.ckpt").string(), res.teacher,
                            base.train.t_max_iteration);
  if (!res.history.empty())
    std::cout << "final teacher map50=" << res.history.back().map50 << "\n";
  std::cout << "checkpoints written to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& out_file) {
  if (!fs::exists(checkpoint)) throw adt::ConfigError("missing checkpoint: " + checkpoint);
  const fs::path manifest = fs::path(data) / (split + ".manifest");
  if (!fs::exists(manifest)) throw adt::ConfigError("missing split manifest: " + manifest.string());

  const adt::det::ModelState model = adt::det::load_checkpoint(checkpoint).state;
  const adt::synth::DatasetManifest m = adt::synth::read_dataset(manifest);
  std::vector<adt::LabeledBoxes> dets, gts;
  for (const adt::synth::ManifestEntry& e : m.entries) {
    if (!e.labels) throw adt::ConfigError("split has no ground truth: " + split);
    const adt::ImageTensor img = adt::synth::load_image(manifest, e);
    dets.push_back(adt::det::detect(model, img, 0.05, 0.5));
    gts.push_back(*e.labels);
  }
  const adt::eval::EvalReport report = adt::eval::evaluate(dets, gts, m.class_names);
  const std::string text = adt::eval::render_report(report);
  std::cout << text;
  if (!out_file.empty()) {
    std::ofstream f(out_file);
    if (!f) throw std::runtime_error("cannot open " + out_file);
    f << text;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct AttackDemoArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "source_val";
  int index = 0;
  std::string out;
  double alpha = 1.0 / 255;
  double epsilon = 4.0 / 255;
  int steps = 3;
  double label_thresh = 0.5;
  double amplify = 10.0;
};

int cmd_attack_demo(const AttackDemoArgs& args) {
  if (!fs::exists(args.checkpoint)) throw adt::ConfigError("missing checkpoint: " + args.checkpoint);
  const fs::path manifest = fs::path(args.data) / (args.split + ".manifest");
  if (!fs::exists(manifest)) throw adt::ConfigError("missing split manifest: " + manifest.string());
  const adt::det::ModelState model = adt::det::load_checkpoint(args.checkpoint).state;
  const adt::synth::DatasetManifest m = adt::synth::read_dataset(manifest);
  if (args.index < 0 || args.index >= static_cast<int>(m.entries.size()))
    throw adt::ConfigError("image index out of range");
  const adt::ImageTensor clean = adt::synth::load_image(manifest, m.entries[args.index]);

  fs::create_directories(args.out);
  const fs::path out(args.out);
  adt::write_ppm((out / "clean.ppm").string(), clean);

  const adt::LabeledBoxes before = adt::det::detect(model, clean, 0.5, 0.5);
  write_detections(out / "dets_before.txt", before);
  const adt::LabeledBoxes pseudo_src = adt::det::detect(model, clean, args.label_thresh, 0.5);
  adt::LabeledBoxes pseudo;
  for (std::size_t i = 0; i < pseudo_src.size(); ++i)
    pseudo.push_back(pseudo_src.boxes[i], pseudo_src.classes[i]);
  if (pseudo.empty())
    std::cout << "note: no confident detections on this image; attack is a no-op\n";

  const struct {
    const char* name;
    adt::det::LossParts parts;
  } variants[] = {{"both", adt::det::LossParts::both},
                  {"cls", adt::det::LossParts::cls_only},
                  {"reg", adt::det::LossParts::reg_only}};

  for (const auto& variant : variants) {
    adt::ImageTensor x = clean;
    std::ofstream trace(out / (std::string("trace_") + variant.name + ".txt"));
    trace << "# step rpn_cls rpn_reg roi_cls roi_reg total\n";
    trace.precision(8);
    for (int t = 0; t < args.steps && !pseudo.empty(); ++t) {
      adt::det::LossSpec spec{pseudo, /*foreground_only=*/true, variant.parts};
      adt::det::GradientEval ev = adt::det::loss_gradients(model, x, spec, false, true);
      trace << t << " " << ev.terms.rpn_cls << " " << ev.terms.rpn_reg << " " << ev.terms.roi_cls
            << " " << ev.terms.roi_reg << " " << ev.loss << "\n";
      x = adt::atk::clip_to_ball(adt::atk::fgsm_step(x, ev.input_grad, args.alpha), clean,
                                 args.epsilon);
    }
    adt::write_ppm((out / (std::string("adv_") + variant.name + ".ppm")).string(), x);

    adt::ImageTensor pert(clean.height, clean.width, clean.channels);
    for (std::size_t i = 0; i < pert.data.size(); ++i)
      pert.data[i] = static_cast<float>(0.5 + args.amplify * (x.data[i] - clean.data[i]));
    adt::write_ppm((out / (std::string("perturb_") + variant.name + ".ppm")).string(),
                   adt::clamp01(pert));

    const adt::LabeledBoxes after = adt::det::detect(model, x, 0.5, 0.5);
    write_detections(out / (std::string("dets_after_") + variant.name + ".txt"), after);
    std::cout << "variant " << variant.name << ": detections " << before.size() << " -> "
              << after.size() << "\n";
  }
  std::cout << "attack demo artifacts written to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_plot(const std::string& metrics_list, const std::string& sweep_file,
             const std::string& out_dir) {
  if (metrics_list.empty() && sweep_file.empty())
    throw adt::ConfigError("plot: give --metrics and/or --sweep");
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  if (!metrics_list.empty()) {
    std::vector<adt::plot::Series> series;
    std::stringstream ss(metrics_list);
    std::string path;
    while (std::getline(ss, path, ',')) {
      if (path.empty()) continue;
      std::ifstream f(path);
      if (!f) throw adt::ConfigError("plot: cannot open metrics log " + path);
      adt::plot::Series s;
      s.name = fs::path(path).stem().string();
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception&) {
          throw adt::ConfigError("plot: malformed metrics line in " + path);
        }
        if (j.value("record", "") == "eval") {
          s.x.push_back(j.at("iter").get<double>());
          s.y.push_back(j.at("map50").get<double>());
        }
      }
      if (s.x.empty()) throw adt::ConfigError("plot: no eval records in " + path);
      series.push_back(std::move(s));
    }
    adt::plot::render_lines((out / "map_vs_iteration.ppm").string(),
                            (out / "map_vs_iteration.json").string(), series, "iteration",
                            "map50");
    std::cout << "wrote " << (out / "map_vs_iteration.ppm") << "\n";
  }

  if (!sweep_file.empty()) {
    std::ifstream f(sweep_file);
    if (!f) throw adt::ConfigError("plot: cannot open sweep summary " + sweep_file);
    json j;
    try {
      f >> j;
    } catch (const json::exception&) {
      throw adt::ConfigError("plot: malformed sweep summary " + sweep_file);
    }
    std::vector<adt::plot::Bar> bars;
    for (const auto& arm : j.at("arms"))
      bars.push_back({arm.at("p_attack").get<double>(), arm.at("map50_mean").get<double>()});
    if (bars.empty()) throw adt::ConfigError("plot: empty sweep summary");
    adt::plot::render_bars((out / "p_attack_sweep.ppm").string(),
                           (out / "p_attack_sweep.json").string(), bars, "p_attack", "map50");
    std::cout << "wrote " << (out / "p_attack_sweep.ppm") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-defense teacher: synthetic cross-domain detection pipeline"};
  app.require_subcommand(1);

  // gen-data
  GenDataArgs gen;
  gen.out = default_out_root() + "/dataset";
  CLI::App* cgen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  cgen->add_option("--out", gen.out, "output dataset directory");
  cgen->add_option("--seed", gen.cfg.seed, "generation seed");
  cgen->add_option("--target-domain", gen.cfg.target_domain, "fog | night");
  cgen->add_option("--img-size", gen.cfg.image_size, "square image size");
  cgen->add_option("--source-train", gen.cfg.source_train, "labeled source images");
  cgen->add_option("--source-val", gen.cfg.source_val, "held-out source images");
  cgen->add_option("--target-train", gen.cfg.target_train, "unlabeled target images");
  cgen->add_option("--target-eval", gen.cfg.target_eval, "held-out target images");
  cgen->add_option("--min-size", gen.cfg.min_size, "minimum object side, px");
  cgen->add_option("--max-size", gen.cfg.max_size, "maximum object side, px");
  cgen->add_option("--min-objects", gen.cfg.min_objects, "objects per scene, lower bound");
  cgen->add_option("--max-objects", gen.cfg.max_objects, "objects per scene, upper bound");
  cgen->add_flag("--small-objects", gen.small_objects, "skew sizes toward small objects");

  // train
  TrainArgs tr;
  tr.out = default_out_root() + "/run";
  CLI::App* ctrain = app.add_subcommand("train", "run domain-adaptive training");
  ctrain->add_option("--data", tr.data, "dataset directory")->required();
  ctrain->add_option("--out", tr.out, "output directory");
  ctrain->add_option("--config", tr.config_path, "JSON config file");
  ctrain->add_option("--resume", tr.resume_dir, "resume from a checkpoint directory");
  ctrain->add_option("--source-model", tr.source_model_path, "pretrained source checkpoint");
  ctrain->add_option("--p-attack-sweep", tr.sweep, "comma list of attack probabilities to sweep");
  ctrain->add_option("--seeds", tr.seeds, "comma list of seeds (sweep mode)");
  ctrain->add_flag("--no-ad", tr.no_ad, "disable adversarial defense (p_attack = 0)");
  ctrain->add_flag("--no-zz", tr.no_zz, "disable zoom-in/zoom-out (ratios pinned to 1)");
  ctrain->add_option("--p-attack", tr.p_attack, "attack probability");
  ctrain->add_option("--seed", tr.seed, "training seed");
  ctrain->add_option("--iters", tr.iters, "mutual-learning iterations");
  ctrain->add_option("--burn-in", tr.burn_in, "source pretrain iterations");
  ctrain->add_option("--lr", tr.lr, "learning rate");
  ctrain->add_option("--beta", tr.beta, "EMA smoothing");
  ctrain->add_option("--delta", tr.delta, "pseudo-label threshold");
  ctrain->add_option("--batch", tr.batch, "batch size per domain");
  ctrain->add_option("--eval-every", tr.eval_every, "evaluation cadence");
  ctrain->add_option("--checkpoint-every", tr.checkpoint_every, "checkpoint cadence");

  // eval
  std::string ev_ckpt, ev_data, ev_split = "target_eval", ev_out;
  CLI::App* ceval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ceval->add_option("--checkpoint", ev_ckpt, "detector checkpoint")->required();
  ceval->add_option("--data", ev_data, "dataset directory")->required();
  ceval->add_option("--split", ev_split, "dataset split name");
  ceval->add_option("--out", ev_out, "write the report here as well");

  // attack-demo
  AttackDemoArgs ad;
  ad.out = default_out_root() + "/attack_demo";
  CLI::App* cdemo = app.add_subcommand("attack-demo", "craft and visualize PGD examples");
  cdemo->add_option("--checkpoint", ad.checkpoint, "detector checkpoint")->required();
  cdemo->add_option("--data", ad.data, "dataset directory")->required();
  cdemo->add_option("--split", ad.split, "dataset split name");
  cdemo->add_option("--index", ad.index, "image index within the split");
  cdemo->add_option("--out", ad.out, "output directory");
  cdemo->add_option("--alpha", ad.alpha, "attack step size");
  cdemo->add_option("--epsilon", ad.epsilon, "L-inf budget");
  cdemo->add_option("--steps", ad.steps, "attack iterations");
  cdemo->add_option("--label-thresh", ad.label_thresh, "pseudo-label score threshold");
  cdemo->add_option("--amplify", ad.amplify, "perturbation visualization gain");

  // plot
  std::string pl_metrics, pl_sweep, pl_out = default_out_root() + "/plots";
  CLI::App* cplot = app.add_subcommand("plot", "render metric curves and sweep charts");
  cplot->add_option("--metrics", pl_metrics, "comma list of metrics .jsonl files");
  cplot->add_option("--sweep", pl_sweep, "sweep summary json");
  cplot->add_option("--out", pl_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cgen->parsed()) return cmd_gen_data(gen);
    if (ctrain->parsed()) return cmd_train(tr);
    if (ceval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out);
    if (cdemo->parsed()) return cmd_attack_demo(ad);
    if (cplot->parsed()) return cmd_plot(pl_metrics, pl_sweep, pl_out);
  } catch (const adt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
