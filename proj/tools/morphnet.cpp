// morphnet: command-line front end.
//
// Exit codes: 0 success, 1 I/O or configuration error, 2 domain constraint
// violation, 3 tolerance breach (gradcheck, fit-variance).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "morphnet/checkpoint.hpp"
#include "morphnet/config.hpp"
#include "morphnet/export.hpp"
#include "morphnet/gradcheck_suite.hpp"
#include "morphnet/image_io.hpp"
#include "morphnet/morph_ref.hpp"

namespace fs = std::filesystem;
using namespace morphnet;

namespace {

constexpr int kOk = 0, kIoError = 1, kDomainError = 2, kToleranceBreach = 3;

struct ExitError {
  int code;
  std::string message;
};

std::string num(double v) { return std::isinf(v) ? (v > 0 ? "inf" : "-inf") : format_number(v); }

double parse_alpha(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ExitError{kIoError, "bad alpha '" + s + "'"};
  return v;
}

std::size_t resolve_threads(int flag) {
  if (flag > 0) return static_cast<std::size_t>(flag);
  if (const char* env = std::getenv("MORPHNET_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

void print_header(const std::string& command, std::uint64_t seed, std::size_t threads,
                  const std::string& extra = "") {
  std::cerr << "# morphnet " << command << "\n# seed = " << seed << "\n# threads = 1";
  if (threads != 1) std::cerr << " (requested " << threads << "; computation is single-threaded)";
  std::cerr << "\n" << extra;
}

std::string fmt_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v == 0 ? 0.0 : v);
  return buf;
}

// ---------------------------------------------------------------------------
// morph

struct MorphArgs {
  std::string op, image, se, miss_se, out;
  bool force = false, ascii = false;
};

template <class T>
void print_grid(const std::string& title, const Tensor<T>& r, const Shape& img, Origin at) {
  std::cout << title << ":\n"
            << render_bordered(r, img[0], img[1], at, [](T v) { return fmt_cell(static_cast<double>(v)); });
}

int cmd_morph(const MorphArgs& a) {
  std::cerr << "# morphnet morph\n# op = " << a.op << "\n# image = " << a.image << "\n# se = " << a.se << "\n";
  if (!a.miss_se.empty()) std::cerr << "# miss-se = " << a.miss_se << "\n";
  const Tensor<double> f = read_pgm(a.image);
  const SEText se = read_se(a.se);

  if (a.op == "binary-hitmiss") {
    if (a.miss_se.empty()) throw ExitError{kIoError, "binary-hitmiss needs --miss-se"};
    const SEText miss = read_se(a.miss_se);
    const BinaryImage img = threshold(f);
    const BinarySE h = to_binary_se(se), m = to_binary_se(miss);
    if (!(h.origin == m.origin) || h.grid.shape() != m.grid.shape())
      throw ExitError{kDomainError, "hit and miss SEs must share extents and origin"};
    const BinaryImage r = binary_hit_or_miss(img, {h.grid, m.grid, h.origin}, a.force);
    if (a.ascii) {
      print_grid("erosion", binary_erode(img, h), img.shape(), h.origin);
      print_grid("dilation", binary_dilate(img, reflect(m)), img.shape(), h.origin);
      print_grid("hit-or-miss", r, img.shape(), h.origin);
    }
    if (!a.out.empty()) write_pgm(a.out, r.cast<double>());
    return kOk;
  }

  const GraySE<double> h = to_gray_se(se);
  Tensor<double> r;
  if (a.op == "erode") {
    r = gray_erode(f, h);
    if (a.ascii) print_grid("erosion", r, f.shape(), h.origin);
  } else if (a.op == "dilate") {
    r = gray_dilate(f, h);
    if (a.ascii) print_grid("dilation", r, f.shape(), h.origin);
  } else if (a.op == "hitmiss") {
    if (a.miss_se.empty()) throw ExitError{kIoError, "hitmiss needs --miss-se"};
    const GraySE<double> m = to_gray_se(read_se(a.miss_se));
    r = gray_hit_or_miss(f, h, m);
    if (a.ascii) {
      print_grid("erosion", gray_erode(f, h), f.shape(), h.origin);
      print_grid("dilation", gray_dilate(f, reflect(m)), f.shape(), h.origin);
      print_grid("hit-or-miss", r, f.shape(), h.origin);
    }
  } else {
    throw ExitError{kIoError, "unknown --op '" + a.op + "'"};
  }
  if (!a.out.empty()) {
    // Grayscale results are written as a CSV grid so negative values survive.
    std::string csv;
    for (std::size_t i = 0; i < r.dim(0); ++i)
      for (std::size_t j = 0; j < r.dim(1); ++j) csv += format_number(r(i, j)) + (j + 1 == r.dim(1) ? "\n" : ",");
    write_file(a.out, csv);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gen-synthetic

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  bool u8 = false;
  int threads = 0;
};

int cmd_gen_synthetic(const SynthArgs& a) {
  std::ostringstream extra;
  extra << "# out = " << a.out << "\n# per_class = " << a.spec.per_class << "\n# noise = " << num(a.spec.noise_sigma)
        << "\n# disk_radius = " << num(a.spec.disk_radius) << "\n# ring = " << num(a.spec.ring_inner) << ".."
        << num(a.spec.ring_outer) << "\n# format = " << (a.u8 ? "u8" : "float32") << "\n";
  print_header("gen-synthetic", a.seed, resolve_threads(a.threads), extra.str());
  Rng rng(a.seed);
  const LabeledSet train = gen_synthetic(a.spec, rng);
  const LabeledSet test = gen_synthetic(a.spec, rng);  // fresh noise draw
  fs::create_directories(a.out);
  write_split(train, a.out, true, !a.u8);
  write_split(test, a.out, false, !a.u8);
  write_class_names(a.out, train.class_names);
  std::cout << "wrote " << train.size() << " training and " << test.size() << " test images to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, out, layer, init, history, resume, spec_out;
  std::string alpha;
  double dnc = std::numeric_limits<double>::quiet_NaN();
  bool nonintersect = false;
  long long seed = -1;
  long long epochs = -1;
  int threads = 0;
};

json build_spec(const TrainConfig& c, const LabeledSet& train) {
  const Shape s = train.sample_shape();
  if (c.preset == "synthetic") {
    if (s[0] != 1 || s[1] != s[2]) throw SpecError("synthetic preset needs square single-channel images");
    return synthetic_spec(c.layer, s[1]);
  }
  if (c.preset == "minivgg-lite" || c.preset == "minivgg")
    return minivgg_spec(c.layer, c.preset == "minivgg-lite", s[0], s[1], train.num_classes());
  const auto bytes = read_file(c.spec_path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(c.spec_path + ": " + e.what());
  }
}

int cmd_train(const TrainArgs& a) {
  TrainConfig c = a.config.empty() ? TrainConfig{} : read_train_config(a.config);
  if (!a.data.empty()) c.data_dir = a.data;
  if (!a.layer.empty()) c.layer.kind = a.layer;
  if (!a.alpha.empty()) c.layer.alpha = parse_alpha(a.alpha);
  if (a.nonintersect) c.layer.nonintersect = true;
  if (!std::isnan(a.dnc)) c.layer.dnc = true, c.layer.th = a.dnc;
  if (!a.init.empty()) c.layer.init = a.init;
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  if (a.epochs >= 0) c.optim.epochs = static_cast<std::size_t>(a.epochs);
  c.optim.seed = c.seed;
  c.validate();
  c.optim.validate();
  if (c.layer.alpha < 0)
    throw ExitError{kDomainError, "alpha must be >= 0 (got " + num(c.layer.alpha) + ")"};
  if (!c.layer.init.empty()) InitSpec::parse(c.layer.init);
  if (c.data_dir.empty()) throw ConfigError("no data directory (set data.dir or pass --data)");
  print_header("train", c.seed, resolve_threads(a.threads), c.describe());

  Rng rng(c.seed);
  LabeledSet train = load_split(c.data_dir, true);
  LabeledSet test = load_split(c.data_dir, false);
  if (c.train_per_class) train = subset(train, c.train_per_class, rng);
  if (c.test_per_class) test = subset(test, c.test_per_class, rng);
  if (test.class_names.size() < train.class_names.size()) test.class_names = train.class_names;

  std::unique_ptr<Model<float>> model;
  std::unique_ptr<Trainer<float>> trainer;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    model = std::make_unique<Model<float>>(restore_model<float>(ck));
    OptimSpec os = ck.optim;
    os.epochs = c.optim.epochs;
    trainer = std::make_unique<Trainer<float>>(*model, os, Rng(c.seed));
    restore_trainer(ck, *trainer);
    std::cerr << "# resumed from " << a.resume << " at epoch " << trainer->epoch() << "\n";
  } else {
    BuildOptions bo;
    bo.first_sigma_f2 = pixel_variance(train);
    model = std::make_unique<Model<float>>(build_model<float>(build_spec(c, train), rng, bo));
    trainer = std::make_unique<Trainer<float>>(*model, c.optim, std::move(rng));
  }
  if (model->output_shape(1)[1] < train.num_classes())
    throw SpecError("model output width is smaller than the number of classes");
  if (!a.spec_out.empty()) write_file(a.spec_out, model->spec().dump(2) + "\n");

  const std::string history = a.history.empty() ? a.out + ".history.csv" : a.history;
  double best = 0;
  trainer->train(train, &test, [&](const EpochStats& s) {
    best = std::max(best, s.test_acc);
    std::cout << "epoch " << s.epoch << " loss " << format_number(static_cast<float>(s.train_loss)) << " train_acc "
              << format_number(static_cast<float>(s.train_acc)) << " test_acc "
              << format_number(static_cast<float>(s.test_acc)) << "\n";
    if (c.checkpoint_every && s.epoch % c.checkpoint_every == 0) {
      save_checkpoint(a.out, snapshot(*trainer));
      write_file(history, history_csv(trainer->history()));
    }
    return true;
  });
  save_checkpoint(a.out, snapshot(*trainer));
  write_file(history, history_csv(trainer->history()));
  const Metrics m = evaluate(*model, train);
  std::cout << "final train_acc " << format_number(static_cast<float>(m.accuracy)) << " best test_acc "
            << format_number(static_cast<float>(best)) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split, const std::string& out) {
  std::cerr << "# morphnet eval\n# model = " << ckpt << "\n# data = " << data << "\n# split = " << split << "\n";
  if (split != "train" && split != "test") throw ExitError{kIoError, "--split must be train or test"};
  const Checkpoint ck = load_checkpoint(ckpt);
  const Model<float> model = restore_model<float>(ck);
  const LabeledSet set = load_split(data, split == "train");
  const Metrics m = evaluate(model, set);
  std::ostringstream os;
  os << "accuracy," << format_number(static_cast<float>(m.accuracy)) << "\nloss,"
     << format_number(static_cast<float>(m.loss)) << "\nconfusion (rows true, columns predicted)\n";
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << "\n";
  }
  std::cout << os.str();
  if (!out.empty()) write_file(out, os.str());
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  std::string layer, alpha = "1";
  bool nonintersect = false, dnc = false;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  int threads = 0;
};

int cmd_gradcheck(const GradArgs& a) {
  GradCase c{a.layer, parse_alpha(a.alpha), a.nonintersect, a.dnc};
  if (c.alpha < 0) throw ExitError{kDomainError, "alpha must be >= 0"};
  bool known = false;
  for (const auto& k : gradcheck_kinds()) known |= k == c.kind;
  if (!known) throw ExitError{kIoError, "unknown --layer '" + c.kind + "'"};
  print_header("gradcheck", a.seed, resolve_threads(a.threads),
               "# case = " + c.label() + "\n# trials = " + std::to_string(a.trials) + "\n");
  Rng rng(a.seed);
  std::size_t redrawn = 0;
  const GradReport r = run_grad_case(c, a.trials, rng, &redrawn);
  std::cout << c.label() << ": max_rel_err " << format_number(r.max_rel) << " at " << r.worst << " over "
            << r.checked << " entries (" << redrawn << " tied instances redrawn)\n";
  const bool ok = r.ok(a.tol);
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kOk : kToleranceBreach;
}

// ---------------------------------------------------------------------------
// fit-variance

struct FitArgs {
  std::string alphas = "0,0.5,1,2,inf", out;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  bool log_fit = false;
  int threads = 0;
};

int cmd_fit_variance(const FitArgs& a) {
  print_header("fit-variance", a.seed, resolve_threads(a.threads),
               "# alphas = " + a.alphas + "\n# trials = " + std::to_string(a.trials) + "\n# fit = " +
                   (a.log_fit ? "log-log" : "linear least squares") + "\n");
  std::vector<double> alphas;
  std::stringstream ss(a.alphas);
  for (std::string tok; std::getline(ss, tok, ',');) alphas.push_back(std::abs(parse_alpha(tok)));
  if (alphas.empty()) throw ExitError{kIoError, "no alphas given"};

  Rng rng(a.seed);
  VarianceModel fitted;
  const VarianceModel& table = VarianceModel::defaults();
  bool within = true;
  std::cout << "alpha,a,b,table_a,table_b,dev_a,dev_b\n";
  for (double alpha : alphas) {
    const VarianceFit f = fit_variance_model(alpha, default_fit_sizes(), a.trials, rng, !a.log_fit);
    if (alpha != 0) fitted.set(alpha, f.a, f.b);
    std::cout << num(alpha) << "," << format_number(f.a) << "," << format_number(f.b);
    if (table.has(alpha)) {
      const auto e = table.entry(alpha);
      const double da = std::abs(f.a - e.a) / e.a, db = std::abs(f.b - e.b) / e.b;
      const double tol = alpha == 0 ? 0.03 : 0.15;
      within &= da <= tol && db <= tol;
      std::cout << "," << format_number(e.a) << "," << format_number(e.b) << "," << format_number(da) << ","
                << format_number(db);
    } else {
      std::cout << ",,,,";
    }
    std::cout << "\n";
  }
  if (!a.out.empty()) write_file(a.out, fitted.to_text());
  return within ? kOk : kToleranceBreach;
}

// ---------------------------------------------------------------------------
// export-filters

int cmd_export(const std::string& ckpt, const std::string& layer, const std::string& out, const std::string& format) {
  std::cerr << "# morphnet export-filters\n# model = " << ckpt << "\n# layer = " << layer << "\n# out = " << out
            << "\n# format = " << format << "\n";
  const ExportFormat f = parse_export_format(format);
  const Checkpoint ck = load_checkpoint(ckpt);
  Model<float> model = restore_model<float>(ck);
  const json manifest = export_filters(model, layer, out, f);
  std::cout << "wrote " << manifest["files"].size() << " files and manifest.json to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable morphological network toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (falls back to MORPHNET_THREADS; default 1)");

  MorphArgs ma;
  auto* morph = app.add_subcommand("morph", "Classical morphology on a PGM image");
  morph->add_option("--op", ma.op, "erode | dilate | hitmiss | binary-hitmiss")
      ->required()
      ->check(CLI::IsMember({"erode", "dilate", "hitmiss", "binary-hitmiss"}));
  morph->add_option("--image", ma.image, "Input PGM")->required();
  morph->add_option("--se", ma.se, "Structuring element (hit SE for hit-or-miss)")->required();
  morph->add_option("--miss-se", ma.miss_se, "Miss SE for hit-or-miss");
  morph->add_option("--out", ma.out, "Result file (PGM for binary ops, CSV for grayscale)");
  morph->add_flag("--force", ma.force, "Evaluate binary hit-or-miss even when the SEs intersect");
  morph->add_flag("--ascii", ma.ascii, "Print bordered result grids");

  SynthArgs sa;
  auto* synth = app.add_subcommand("gen-synthetic", "Write the solid-circle / annular-ring dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--per-class", sa.spec.per_class, "Samples per class")->capture_default_str();
  synth->add_option("--noise", sa.spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--radius", sa.spec.disk_radius, "Disk radius")->capture_default_str();
  synth->add_option("--ring-outer", sa.spec.ring_outer, "Ring outer radius")->capture_default_str();
  synth->add_option("--ring-inner", sa.spec.ring_inner, "Ring inner radius")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_flag("--u8", sa.u8, "Write 8-bit images (clamped) instead of float32");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "Training config file");
  train->add_option("--data", ta.data, "Data directory (overrides data.dir)");
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--layer", ta.layer, "Filter layer kind")
      ->check(CLI::IsMember(filter_kinds()));
  train->add_option("--alpha", ta.alpha, "Smooth-max alpha for soft kinds (number or inf)");
  train->add_flag("--nonintersect", ta.nonintersect, "Enforce non-intersecting dual SEs");
  train->add_option("--dnc", ta.dnc, "Enable don't-care masking with this threshold");
  train->add_option("--init", ta.init, "Init spec, e.g. kaiming, const:0.01, halfnormal:1, shm:1");
  train->add_option("--seed", ta.seed, "Random seed (overrides run.seed)");
  train->add_option("--epochs", ta.epochs, "Epoch budget (overrides optim.epochs)");
  train->add_option("--history", ta.history, "History CSV path (default <out>.history.csv)");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train->add_option("--save-spec", ta.spec_out, "Also write the resolved model spec as JSON");

  std::string eval_model, eval_data, eval_split = "test", eval_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--model", eval_model, "Checkpoint")->required();
  ev->add_option("--data", eval_data, "Data directory")->required();
  ev->add_option("--split", eval_split, "train or test")->capture_default_str();
  ev->add_option("--out", eval_out, "Also write the metrics to this file");

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--layer", ga.layer, "Layer kind or loss (mse, ce)")->required();
  gc->add_option("--alpha", ga.alpha, "Alpha for soft kinds")->capture_default_str();
  gc->add_flag("--nonintersect", ga.nonintersect, "Dual-SE non-intersection");
  gc->add_flag("--dnc", ga.dnc, "Dual-SE don't-care masking (threshold 0)");
  gc->add_option("--trials", ga.trials, "Random instances")->capture_default_str();
  gc->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
  gc->add_option("--tol", ga.tol, "Maximum relative error")->capture_default_str();

  FitArgs fa;
  auto* fv = app.add_subcommand("fit-variance", "Fit the smooth-max variance model");
  fv->add_option("--alphas", fa.alphas, "Comma-separated alphas (inf allowed)")->capture_default_str();
  fv->add_option("--trials", fa.trials, "Monte-Carlo trials per size")->capture_default_str();
  fv->add_option("--out", fa.out, "Variance table output");
  fv->add_option("--seed", fa.seed, "Random seed")->capture_default_str();
  fv->add_flag("--log-fit", fa.log_fit, "Fit in log space instead of linear least squares");

  std::string ex_model, ex_layer, ex_out, ex_format = "pgm";
  auto* ex = app.add_subcommand("export-filters", "Write learned filters as images or CSV");
  ex->add_option("--model", ex_model, "Checkpoint")->required();
  ex->add_option("--layer", ex_layer, "Layer name")->required();
  ex->add_option("--out", ex_out, "Output directory")->required();
  ex->add_option("--format", ex_format, "pgm or csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kIoError;
  }
  sa.threads = ta.threads = ga.threads = fa.threads = threads;

  try {
    if (*morph) return cmd_morph(ma);
    if (*synth) return cmd_gen_synthetic(sa);
    if (*train) return cmd_train(ta);
    if (*ev) return cmd_eval(eval_model, eval_data, eval_split, eval_out);
    if (*gc) return cmd_gradcheck(ga);
    if (*fv) return cmd_fit_variance(fa);
    if (*ex) return cmd_export(ex_model, ex_layer, ex_out, ex_format);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDomainError;
  } catch (const std::exception& e) {
    // MorphError, IntersectingSE, ShapeError, SpecError, LayerError and
    // other constraint violations.
    std::cerr << "error: " << e.what() << "\n";
    return kDomainError;
  }
  return kOk;
}
