#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "lmda/dataio.hpp"
#include "lmda/interpret.hpp"
#include "lmda/model.hpp"
#include "lmda/sigproc.hpp"
#include "lmda/train.hpp"

namespace lmda::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LMDA_SEED")) {
    const std::string s(env);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') {
      throw UsageError("LMDA_SEED='" + s + "' is not a non-negative integer");
    }
    return v;
  }
  return 0;
}

void print_config(std::ostream& err, const std::string& sub, const json& cfg) {
  err << "lmda " << sub << " config: " << cfg.dump() << "\n";
}

std::pair<double, double> parse_band(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--band expects LOW:HIGH, got '" + text + "'");
  try {
    std::size_t a = 0, b = 0;
    const double lo = std::stod(text.substr(0, colon), &a);
    const double hi = std::stod(text.substr(colon + 1), &b);
    if (a != colon || b != text.size() - colon - 1) throw std::invalid_argument("trailing");
    if (!(lo > 0.0 && hi > lo)) throw UsageError("--band needs 0 < LOW < HIGH, got '" + text + "'");
    return {lo, hi};
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("--band expects LOW:HIGH, got '" + text + "'");
  }
}

std::string fmt(double v) { return train::format_metric(v); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind;
  std::size_t n_per_class = 0;
  std::size_t channels = 8;
  std::optional<std::size_t> samples;
  std::optional<double> fs;
  std::optional<std::uint64_t> seed;
  double noise = 1.0;
  std::string out;
};

int do_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  const bool erp = a.kind == "erp";
  const std::size_t samples = a.samples.value_or(erp ? 250 : 500);
  const double fs = a.fs.value_or(erp ? 200.0 : 250.0);
  const std::uint64_t seed = resolve_seed(a.seed);
  print_config(err, "synth",
               {{"kind", a.kind}, {"n_per_class", a.n_per_class}, {"channels", a.channels},
                {"samples", samples}, {"fs_hz", fs}, {"seed", seed}, {"noise_std", a.noise},
                {"out", a.out}});
  TrialSet x;
  if (erp) {
    dataio::ErpOptions o;
    o.noise_std = a.noise;
    x = dataio::synth_erp(a.n_per_class, a.channels, samples, fs, seed, o);
  } else {
    dataio::ErdOptions o;
    o.noise_std = a.noise;
    x = dataio::synth_erd(a.n_per_class, a.channels, samples, fs, seed, o);
  }
  dataio::save(x, a.out);
  out << "wrote " << a.out << ": " << x.n_trials << " trials x " << x.n_channels
      << " channels x " << x.n_samples << " samples\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string data;
  std::string out;
  std::string test;
  std::string test_out;
  std::string band;
  std::size_t order = 200;
  std::optional<double> resample;
  bool normalize = false;
  bool align = false;
  std::optional<double> baseline_secs;
};

int do_preprocess(const PreprocessArgs& a, std::ostream& out, std::ostream& err) {
  if (a.test.empty() != a.test_out.empty()) {
    throw UsageError("--test and --test-out must be given together");
  }
  std::optional<std::pair<double, double>> band;
  if (!a.band.empty()) band = parse_band(a.band);
  if (a.order < 2 || a.order % 2 != 0) throw UsageError("--order must be even and >= 2");
  print_config(err, "preprocess",
               {{"data", a.data},
                {"out", a.out},
                {"test", a.test},
                {"test_out", a.test_out},
                {"band", band ? json::array({band->first, band->second}) : json(nullptr)},
                {"order", a.order},
                {"resample_hz", a.resample ? json(*a.resample) : json(nullptr)},
                {"baseline_secs", a.baseline_secs ? json(*a.baseline_secs) : json(nullptr)},
                {"normalize", a.normalize},
                {"align", a.align},
                {"steps", "band-pass, resample, baseline, normalize, align"}});

  std::vector<TrialSet> sets{dataio::load(a.data)};
  if (!a.test.empty()) {
    sets.push_back(dataio::load(a.test));
    require_compatible(sets[0], sets[1]);
  }
  for (auto& x : sets) {
    if (band) {
      x = sigproc::filter_trials(x, sigproc::design_bandpass(a.order, band->first, band->second,
                                                             x.fs_hz));
    }
    if (a.resample) x = sigproc::resample(x, *a.resample);
    if (a.baseline_secs) {
      auto split = sigproc::split_baseline(x, *a.baseline_secs);
      x = sigproc::baseline_correct(split.trials, split.baseline);
    }
    if (a.normalize) x = sigproc::channel_normalize(x);
  }
  if (a.align) {
    // Fitted on the training file only; the test file reuses its transform.
    const auto t = sigproc::fit_alignment(sets[0]);
    for (auto& x : sets) x = sigproc::apply_alignment(x, t);
  }
  dataio::save(sets[0], a.out);
  out << "wrote " << a.out << ": " << sets[0].n_trials << " trials x " << sets[0].n_channels
      << " channels x " << sets[0].n_samples << " samples @ " << fmt(sets[0].fs_hz) << " Hz\n";
  if (sets.size() > 1) {
    dataio::save(sets[1], a.test_out);
    out << "wrote " << a.test_out << ": " << sets[1].n_trials << " trials\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string test;
  std::string out;
  std::string log;
  std::size_t epochs = 300;
  std::size_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::optional<std::uint64_t> seed;
  bool no_channel_attn = false;
  bool no_depth_attn = false;
  bool class_weights = false;
  std::string metric = "acc";
};

int do_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrialSet tr = dataio::load(a.data);
  const TrialSet te = dataio::load(a.test);
  require_compatible(tr, te);

  ModelConfig mc;
  mc.n_channels = tr.n_channels;
  mc.n_samples = tr.n_samples;
  mc.n_classes = tr.n_classes();
  mc.fs_hz = tr.fs_hz;
  mc.n_train = tr.n_trials;
  mc.use_channel_attn = !a.no_channel_attn;
  mc.use_depth_attn = !a.no_depth_attn;
  mc.seed = resolve_seed(a.seed);
  mc.validate();

  train::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.lr = a.lr;
  tc.weight_decay = a.weight_decay;
  tc.seed = mc.seed;
  tc.class_weights = a.class_weights;
  tc.metric = a.metric == "auc" ? train::Metric::kAuc : train::Metric::kAccuracy;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  LmdaModel model(mc);
  print_config(err, "train",
               {{"data", a.data},
                {"test", a.test},
                {"out", a.out},
                {"log", a.log},
                {"model", json::parse(config_to_json(mc))},
                {"param_count", model.param_count()},
                {"epochs", tc.epochs},
                {"batch_size", tc.batch_size},
                {"lr", tc.lr},
                {"betas", {tc.beta1, tc.beta2}},
                {"weight_decay", tc.weight_decay},
                {"eps", tc.eps},
                {"seed", tc.seed},
                {"class_weights", tc.class_weights},
                {"metric", train::metric_name(tc.metric)}});

  out << "epoch,train_loss,test_acc,test_kappa,test_auc\n";
  const auto record = train::train_loop(model, tr, te, tc, [&](const train::EpochRow& row) {
    out << train::csv_row(row) << "\n" << std::flush;
  });
  save_checkpoint(model, a.out);
  if (!a.log.empty()) dataio::write_text_atomic(a.log, record.to_csv());
  err << "best_" << train::metric_name(tc.metric) << "=" << fmt(record.best_metric)
      << " last10_mean=" << fmt(record.last10_mean) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
};

int do_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  print_config(err, "eval", {{"model", a.model}, {"data", a.data}});
  const LmdaModel model = load_checkpoint(a.model);
  const TrialSet x = dataio::load(a.data);
  const auto ev = train::evaluate(model, x);
  out << "test_acc,test_kappa,test_auc\n"
      << fmt(ev.accuracy) << "," << fmt(ev.kappa) << "," << (ev.auc ? fmt(*ev.auc) : "") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string model;
  std::string data;
  std::string mode = "ern";
  std::optional<std::size_t> per_class;
  std::size_t top_t = 10;
  std::string ref_channel = "Cz";
  std::size_t grid = 64;
  std::string cam_mapping = "receptive-field";
  std::string out_dir;
};

int do_explain(const ExplainArgs& a, std::ostream& out, std::ostream& err) {
  const std::size_t per_class = a.per_class.value_or(a.mode == "mi" ? 5 : 10);
  if (per_class < 1) throw UsageError("--per-class must be >= 1");
  print_config(err, "explain",
               {{"model", a.model},
                {"data", a.data},
                {"mode", a.mode},
                {"per_class", per_class},
                {"top_t", a.top_t},
                {"ref_channel", a.ref_channel},
                {"grid", a.grid},
                {"cam_mapping", a.cam_mapping},
                {"out_dir", a.out_dir}});
  const auto mapping = a.cam_mapping == "interpolate" ? interpret::TimeMapping::kInterpolate
                                                      : interpret::TimeMapping::kReceptiveField;
  const LmdaModel model = load_checkpoint(a.model);
  const TrialSet x = dataio::load(a.data);
  const auto confident = interpret::select_confident(model, x, per_class);
  if (confident.shortfall > 0) {
    err << "warning: " << confident.shortfall
        << " requested trials unavailable (too few correct predictions)\n";
  }
  const auto& montage = dataio::builtin_montage();
  if (!dataio::positions_for(montage, x.channel_names)) {
    err << "warning: some channels are not in the built-in montage; SVG maps skipped\n";
  }
  if (a.mode == "ern") {
    const auto results = interpret::algorithm1_ern(
        model, std::span<const interpret::ConfidentTrials>(&confident, 1), a.ref_channel,
        mapping);
    interpret::export_ern(a.out_dir, results, x, montage, a.grid);
    out << "class,prominent_time_s\n";
    for (const auto& r : results) out << r.class_name << "," << fmt(r.prominent_time_s) << "\n";
  } else {
    if (a.top_t > x.n_samples) {
      throw UsageError("--top-t " + std::to_string(a.top_t) + " exceeds the " +
                       std::to_string(x.n_samples) + " samples per trial");
    }
    const auto results = interpret::algorithm2_mi(model, confident, a.top_t, mapping);
    interpret::export_mi(a.out_dir, results, x, montage, a.grid);
    out << "class,top_channel,weight\n";
    for (const auto& r : results) {
      if (r.skipped_trials > 0) {
        err << "warning: class " << r.class_name << ": " << r.skipped_trials
            << " trials with an all-zero activation map skipped\n";
      }
      const auto best = static_cast<std::size_t>(
          std::max_element(r.channel_weights.begin(), r.channel_weights.end()) -
          r.channel_weights.begin());
      out << r.class_name << "," << x.channel_names[best] << "," << fmt(r.channel_weights[best])
          << "\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int do_info(const std::string& path, std::ostream& out, std::ostream& err) {
  print_config(err, "info", {{"file", path}});
  const auto bytes = dataio::read_file(path);
  const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
  if (magic == "EEGB") {
    const auto header = dataio::read_eegb_header(path);
    const TrialSet x = dataio::decode_eegb(bytes);
    out << "format: EEGB v" << header.version << "\n";
    out << "header: " << header.json << "\n";
    std::vector<std::size_t> counts(x.n_classes(), 0);
    for (int l : x.labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t k = 0; k < counts.size(); ++k) {
      out << "class " << k << " (" << x.class_names[k] << "): " << counts[k] << " trials\n";
    }
  } else if (magic == "LMDM") {
    const LmdaModel m = decode_checkpoint(bytes);
    out << "format: LMDM v1\n";
    out << "config: " << config_to_json(m.config()) << "\n";
    out << "param_count: " << m.param_count() << "\n";
    for (const auto& p : m.parameters()) {
      out << "param " << p.name << " " << shape_to_string(p.value.shape()) << "\n";
    }
    for (const auto& b : m.buffers()) {
      out << "buffer " << b.name << " " << shape_to_string(b.value.shape()) << "\n";
    }
  } else {
    throw dataio::FormatError(dataio::FormatErrorKind::kBadMagic,
                              path + ": neither an EEGB data file nor an LMDM checkpoint");
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LMDA-Net EEG decoding: synthesize, preprocess, train, evaluate, explain"};
  app.name("lmda");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic ERP or ERD data set");
  s->add_option("--kind", synth.kind, "erp or erd")->required()->check(CLI::IsMember({"erp", "erd"}));
  s->add_option("--n-per-class", synth.n_per_class, "Trials per class")->required()->check(CLI::PositiveNumber);
  s->add_option("--channels", synth.channels, "Channel count")->capture_default_str();
  s->add_option("--samples", synth.samples, "Samples per trial (erp 250, erd 500)");
  s->add_option("--fs", synth.fs, "Sampling rate in Hz (erp 200, erd 250)");
  s->add_option("--seed", synth.seed, "Seed (falls back to LMDA_SEED, then 0)");
  s->add_option("--noise", synth.noise, "Background noise standard deviation")->capture_default_str();
  s->add_option("--out", synth.out, "Output EEGB file")->required();

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Filter, resample, baseline-correct, normalize, align");
  p->add_option("--data", pre.data, "Input EEGB file")->required();
  p->add_option("--out", pre.out, "Output EEGB file")->required();
  p->add_option("--test", pre.test, "Optional test file processed with the same settings");
  p->add_option("--test-out", pre.test_out, "Output for the processed test file");
  p->add_option("--band", pre.band, "Band-pass LOW:HIGH in Hz");
  p->add_option("--order", pre.order, "FIR order")->capture_default_str();
  p->add_option("--resample", pre.resample, "Target sampling rate in Hz");
  p->add_flag("--normalize", pre.normalize, "Per trial and channel z-scoring");
  p->add_flag("--align", pre.align, "Euclidean alignment (fitted on --data)");
  p->add_option("--baseline-secs", pre.baseline_secs,
                "Subtract the mean of the first S seconds, then drop them");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and log per-epoch test metrics");
  t->add_option("--data", tr.data, "Training EEGB file")->required();
  t->add_option("--test", tr.test, "Test EEGB file")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--log", tr.log, "Per-epoch CSV log");
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed (falls back to LMDA_SEED, then 0)");
  t->add_flag("--no-channel-attn", tr.no_channel_attn, "Replace channel attention by depth repetition");
  t->add_flag("--no-depth-attn", tr.no_depth_attn, "Remove the depth attention module");
  t->add_flag("--class-weights", tr.class_weights, "Inverse-frequency class weights in the loss");
  t->add_option("--metric", tr.metric, "acc or auc")->capture_default_str()->check(CLI::IsMember({"acc", "auc"}));

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a data set");
  e->add_option("--model", ev.model)->required();
  e->add_option("--data", ev.data)->required();

  ExplainArgs ex;
  auto* x = app.add_subcommand("explain", "Class-activation interpretation of a trained model");
  x->add_option("--model", ex.model)->required();
  x->add_option("--data", ex.data)->required();
  x->add_option("--mode", ex.mode, "ern (temporal + spatial) or mi (channel weights)")
      ->capture_default_str()
      ->check(CLI::IsMember({"ern", "mi"}));
  x->add_option("--per-class", ex.per_class, "Confident trials per class (ern 10, mi 5)");
  x->add_option("--top-t", ex.top_t, "Time samples per trial in mi mode")->capture_default_str();
  x->add_option("--ref-channel", ex.ref_channel, "Channel of the ERP curve")->capture_default_str();
  x->add_option("--grid", ex.grid, "Topography grid size")->capture_default_str();
  x->add_option("--cam-mapping", ex.cam_mapping,
                "Feature-to-input time mapping: receptive-field or interpolate")
      ->capture_default_str()
      ->check(CLI::IsMember({"receptive-field", "interpolate"}));
  x->add_option("--out-dir", ex.out_dir)->required();

  std::string info_path;
  auto* i = app.add_subcommand("info", "Print an EEGB or LMDM header");
  i->add_option("file", info_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& err_) {
    const int code = app.exit(err_, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return do_synth(synth, out, err);
    if (p->parsed()) return do_preprocess(pre, out, err);
    if (t->parsed()) return do_train(tr, out, err);
    if (e->parsed()) return do_eval(ev, out, err);
    if (x->parsed()) return do_explain(ex, out, err);
    if (i->parsed()) return do_info(info_path, out, err);
  } catch (const UsageError& err_) {
    err << "error: " << err_.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& err_) {
    err << "numeric error: " << err_.what() << "\n";
    return kExitNumeric;
  } catch (const dataio::FormatError& err_) {
    err << "data error: " << err_.what() << "\n";
    return kExitData;
  } catch (const std::exception& err_) {
    err << "data error: " << err_.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace lmda::cli
