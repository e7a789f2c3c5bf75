// Command-line front end: phantom, train, eval, predict, gradcheck, shapes.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "brainformer/checkpoint.hpp"
#include "brainformer/gradcheck_suite.hpp"
#include "brainformer/manifest.hpp"
#include "brainformer/model.hpp"
#include "brainformer/phantom.hpp"
#include "brainformer/trainer.hpp"
#include "brainformer/volume_io.hpp"

namespace fs = std::filesystem;
using namespace brainformer;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "key=value configuration file");
  cmd->add_option("-s,--set", args.overrides, "override a setting, e.g. --set steps=500")->allow_extra_args(false);
}

void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    apply_setting(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
}

TrainConfig resolve_config(const ConfigArgs& args, TrainConfig base = {}) {
  TrainConfig cfg = args.file.empty() ? base : load_config_file(args.file);
  apply_overrides(cfg, args.overrides);
  return cfg;
}

void echo_config(const TrainConfig& cfg) {
  std::cerr << "# configuration\n";
  for (const auto& [k, v] : config_entries(cfg)) std::cerr << "#   " << k << " = " << v << '\n';
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string out = "phantoms";
  std::size_t train = 8, test = 2;
  std::uint64_t seed = 1;
  std::string extents = "32";
  std::size_t tumors = 1;
  double noise = 0.1;
  bool centered = false;
};

int run_phantom(const PhantomArgs& a) {
  fs::create_directories(a.out);
  Manifest manifest;
  TrainConfig probe;
  apply_setting(probe, "block", a.extents);
  auto emit = [&](const std::string& split, std::size_t i) {
    PhantomSpec spec;
    spec.seed = a.seed + manifest.entries.size();
    spec.extents = probe.model.block;
    spec.tumors = a.tumors;
    spec.noise = a.noise;
    spec.centered = a.centered;
    const std::string file = split + "_" + std::to_string(i) + ".brnf";
    write_volume((fs::path(a.out) / file).string(), generate_phantom(spec));
    manifest.entries.push_back({split, file, spec.seed, ""});
  };
  for (std::size_t i = 0; i < a.train; ++i) emit("train", i);
  for (std::size_t i = 0; i < a.test; ++i) emit("test", i);
  const auto path = (fs::path(a.out) / "manifest.txt").string();
  write_manifest(path, manifest);
  std::cout << "wrote " << manifest.entries.size() << " phantoms of " << extents_string(probe.model.block)
            << " and " << path << '\n';
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string manifest;
  std::string out = "run";
  std::string resume;
  std::string split = "train";
};

template <Scalar T>
int train_with(TrainConfig cfg, const TrainArgs& a) {
  auto subjects = load_subjects(read_manifest(a.manifest), a.split, cfg.model);
  fs::create_directories(a.out);
  Trainer<T> trainer(cfg, std::move(subjects));
  const auto trace_path = (fs::path(a.out) / "trace.txt").string();
  // A resumed run keeps the trace lines up to its checkpoint and drops any
  // later ones left behind by the interrupted run.
  std::string kept;
  if (!a.resume.empty()) {
    trainer.resume(read_checkpoint<T>(a.resume));
    std::cerr << "resuming at step " << trainer.step() << '\n';
    std::ifstream old(trace_path);
    for (std::string line; std::getline(old, line);) {
      if (!line.empty() && std::stoull(line) <= trainer.step()) kept += line + '\n';
    }
  }
  std::ofstream trace(trace_path, std::ios::out | std::ios::trunc);
  if (!trace) throw IoError("cannot write " + trace_path);
  trace << kept;
  run_training(trainer, cfg.steps, &trace, a.out);
  std::cout << "trained to step " << trainer.step() << "; trace " << trace_path << ", checkpoint "
            << (fs::path(a.out) / "final.brck").string() << '\n';
  return kExitOk;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.resume.empty()) {
    // The checkpoint carries the run's configuration; only overrides apply on top.
    const auto dtype = read_checkpoint_dtype(a.resume);
    cfg = dtype == DType::f64 ? checkpoint_config(read_checkpoint<double>(a.resume))
                              : checkpoint_config(read_checkpoint<float>(a.resume));
    const auto hash = model_hash(cfg.model);
    apply_overrides(cfg, a.config.overrides);
    if (model_hash(cfg.model) != hash) throw ConfigError("overrides on resume may not change the model");
    if (cfg.precision != (dtype == DType::f64 ? Precision::f64 : Precision::f32)) {
      throw ConfigError("overrides on resume may not change the precision");
    }
  } else {
    cfg = resolve_config(a.config);
  }
  cfg.validate();
  echo_config(cfg);
  return cfg.precision == Precision::f64 ? train_with<double>(cfg, a) : train_with<float>(cfg, a);
}

// ---- eval / predict --------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", json;
};

template <Scalar T>
int eval_with(const EvalArgs& a) {
  const auto ckpt = read_checkpoint<T>(a.checkpoint);
  const auto cfg = checkpoint_config(ckpt);
  Brainformer<T> model(cfg.model, cfg.seed);
  restore_checkpoint(ckpt, model);
  const auto subjects = load_subjects(read_manifest(a.manifest), a.split, cfg.model, false);
  const auto ev = evaluate(model, subjects);
  nlohmann::json j;
  j["mean"] = to_json(ev.mean);
  for (const auto& s : ev.subjects) {
    std::cout << s.name << '\n' << to_text(s.report);
    j["subjects"][s.name] = to_json(s.report);
  }
  std::cout << "mean over " << ev.subjects.size() << " subjects\n" << to_text(ev.mean);
  if (!a.json.empty()) {
    std::ofstream out(a.json);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + a.json);
  }
  return kExitOk;
}

int run_eval(const EvalArgs& a) {
  return read_checkpoint_dtype(a.checkpoint) == DType::f64 ? eval_with<double>(a) : eval_with<float>(a);
}

struct PredictArgs {
  std::string checkpoint, input, output;
};

template <Scalar T>
int predict_with(const PredictArgs& a) {
  const auto ckpt = read_checkpoint<T>(a.checkpoint);
  const auto cfg = checkpoint_config(ckpt);
  Brainformer<T> model(cfg.model, cfg.seed);
  restore_checkpoint(ckpt, model);
  const auto volume = normalize(read_volume(a.input));
  write_volume(a.output, label_volume(volume.extents, predict_labels(model, volume)));
  std::cout << "wrote labels " << extents_string(volume.extents) << " to " << a.output << '\n';
  return kExitOk;
}

int run_predict(const PredictArgs& a) {
  return read_checkpoint_dtype(a.checkpoint) == DType::f64 ? predict_with<double>(a) : predict_with<float>(a);
}

// ---- gradcheck / shapes ----------------------------------------------------

struct GradcheckArgs {
  ConfigArgs config;
  GradcheckSuiteOptions options;
};

int run_gradcheck(const GradcheckArgs& a) {
  // The gradient check runs on an 8³ block unless told otherwise.
  TrainConfig base;
  base.model.block = {8, 8, 8};
  const auto cfg = resolve_config(a.config, base);
  echo_config(cfg);
  const auto report = run_gradcheck_suite(cfg.model, a.options);
  std::printf("%-24s %-40s %7s %12s  %s\n", "module", "tensor", "coords", "max rel err", "worst: index analytic numeric");
  for (const auto& g : report.groups) {
    for (const auto& e : g.entries) {
      std::printf("%-24s %-40s %7zu %12.3e  %zu %.6e %.6e\n", g.module.c_str(), e.name.c_str(), e.coords_checked,
                  e.max_relative_error, e.worst_index, e.worst_analytic, e.worst_numeric);
    }
  }
  for (const auto& g : report.groups) {
    std::printf("%-28s max %.3e %s\n", g.module.c_str(), g.max_error(),
                g.max_error() < report.tolerance ? "ok" : "FAIL");
  }
  const bool ok = report.passed();
  std::printf("gradcheck %s (tolerance %.1e)\n", ok ? "PASS" : "FAIL", report.tolerance);
  return ok ? kExitOk : kExitNumeric;
}

struct ShapesArgs {
  ConfigArgs config;
  bool verify = false;
};

int run_shapes(const ShapesArgs& a) {
  const auto cfg = resolve_config(a.config);
  echo_config(cfg);
  const auto predicted = predicted_shapes(cfg.model);
  ShapeTrace actual;
  if (a.verify) {
    Brainformer<double> model(cfg.model, cfg.seed);
    typename Tape<double>::Suspend no_record;
    model.forward(Tensor<double>({cfg.model.channels, cfg.model.block[0], cfg.model.block[1], cfg.model.block[2]}),
                  &actual);
    if (actual != predicted) {
      std::cerr << "forward pass disagrees with the predicted shape trace\n";
      for (const auto& [name, shape] : actual) std::cerr << "  " << name << " " << shape_string(shape) << '\n';
      return kExitNumeric;
    }
  }
  for (const auto& [name, shape] : predicted) std::printf("%-10s %s\n", name.c_str(), shape_string(shape).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brainformer: transformer segmentation of multimodal 3D volumes"};
  app.require_subcommand(1);

  PhantomArgs phantom;
  auto* cmd_phantom = app.add_subcommand("phantom", "write synthetic tumor volumes and a manifest");
  cmd_phantom->add_option("-o,--out", phantom.out, "output directory")->capture_default_str();
  cmd_phantom->add_option("--train", phantom.train, "training volumes")->capture_default_str();
  cmd_phantom->add_option("--test", phantom.test, "test volumes")->capture_default_str();
  cmd_phantom->add_option("--seed", phantom.seed, "seed of the first volume")->capture_default_str();
  cmd_phantom->add_option("--extents", phantom.extents, "HxWxD or a single edge")->capture_default_str();
  cmd_phantom->add_option("--tumors", phantom.tumors, "tumors per volume")->capture_default_str();
  cmd_phantom->add_option("--noise", phantom.noise, "Gaussian noise sigma")->capture_default_str();
  cmd_phantom->add_flag("--centered", phantom.centered, "place tumors at the center");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "train on a manifest split");
  add_config_options(cmd_train, train.config);
  cmd_train->add_option("-m,--manifest", train.manifest, "dataset manifest")->required();
  cmd_train->add_option("-o,--out", train.out, "run directory (trace and checkpoints)")->capture_default_str();
  cmd_train->add_option("--resume", train.resume, "continue from a checkpoint");
  cmd_train->add_option("--split", train.split, "manifest split to train on")->capture_default_str();

  EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "region metrics of a checkpoint on a manifest split");
  cmd_eval->add_option("-k,--checkpoint", eval.checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("-m,--manifest", eval.manifest, "dataset manifest")->required();
  cmd_eval->add_option("--split", eval.split, "manifest split to evaluate")->capture_default_str();
  cmd_eval->add_option("--json", eval.json, "also write the report as JSON");

  PredictArgs predict;
  auto* cmd_predict = app.add_subcommand("predict", "segment one volume");
  cmd_predict->add_option("-k,--checkpoint", predict.checkpoint, "checkpoint file")->required();
  cmd_predict->add_option("-i,--input", predict.input, "input BRNF volume")->required();
  cmd_predict->add_option("-o,--output", predict.output, "output BRNF label volume")->required();

  GradcheckArgs gradcheck;
  auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference check of every module and the network");
  add_config_options(cmd_grad, gradcheck.config);
  cmd_grad->add_option("--coords", gradcheck.options.max_coords, "coordinates per tensor (0: all)")
      ->capture_default_str();
  cmd_grad->add_option("--step", gradcheck.options.step, "central difference step")->capture_default_str();
  cmd_grad->add_option("--floor", gradcheck.options.floor, "gradients below this are compared absolutely")
      ->capture_default_str();
  cmd_grad->add_option("--tolerance", gradcheck.options.tolerance, "max relative error")->capture_default_str();
  cmd_grad->add_option("--seed", gradcheck.options.seed, "seed for inputs and sampling")->capture_default_str();

  ShapesArgs shapes;
  auto* cmd_shapes = app.add_subcommand("shapes", "print the tensor shape trace of a configuration");
  add_config_options(cmd_shapes, shapes.config);
  cmd_shapes->add_flag("--verify", shapes.verify, "also run a forward pass and compare");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cmd_phantom) return run_phantom(phantom);
    if (*cmd_train) return run_train(train);
    if (*cmd_eval) return run_eval(eval);
    if (*cmd_predict) return run_predict(predict);
    if (*cmd_grad) return run_gradcheck(gradcheck);
    if (*cmd_shapes) return run_shapes(shapes);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}
