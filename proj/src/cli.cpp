#include "hdnn/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "hdnn/corpus.hpp"
#include "hdnn/io.hpp"
#include "hdnn/network.hpp"
#include "hdnn/trainer.hpp"

namespace fs = std::filesystem;

namespace hdnn {

namespace {

struct TrainFlags {
  Real lr = 0.1;
  Real momentum = 0.9;
  std::size_t batch = 256;
  std::size_t epochs = 10;
  std::string schedule = "constant";
  std::uint64_t seed = 1;
  bool lr_per_sample = false;
  std::string report;

  void add(CLI::App* cmd, Real default_lr, std::size_t default_epochs) {
    lr = default_lr;
    epochs = default_epochs;
    cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
    cmd->add_option("--momentum", momentum, "Momentum from epoch 2 on (epoch 1 always uses 0)")->capture_default_str();
    cmd->add_option("--batch", batch, "Minibatch size in frames")->capture_default_str();
    cmd->add_option("--epochs", epochs, "Number of epochs")->capture_default_str();
    cmd->add_option("--schedule", schedule, "constant | halve-on-cv-stall")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for initialisation and shuffling")->capture_default_str();
    cmd->add_flag("--lr-per-sample", lr_per_sample, "Scale the step by the frames in each update");
    cmd->add_option("--report", report, "Write per-epoch reports (JSON lines) to this file");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.learning_rate = lr;
    c.momentum_after_first_epoch = momentum;
    c.minibatch_size = batch;
    c.max_epochs = epochs;
    c.lr_schedule = parse_lr_schedule(schedule);
    c.seed = seed;
    c.lr_per_sample = lr_per_sample;
    return c;
  }
};

struct ArchFlags {
  std::string arch = "highway";
  std::size_t hidden = 32;
  std::size_t layers = 3;

  void add(CLI::App* cmd) {
    cmd->add_option("--arch", arch, "plain | highway")->capture_default_str();
    cmd->add_option("--hidden", hidden, "Hidden units per layer (H)")->capture_default_str();
    cmd->add_option("--layers", layers, "Hidden layers including the input projection (L)")->capture_default_str();
  }
};

void emit_reports(const std::vector<EpochReport>& reports, const std::string& path, std::ostream& out) {
  if (!path.empty()) {
    std::ofstream os(path, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path);
    for (const auto& r : reports) write_report_line(os, r);
    return;
  }
  for (const auto& r : reports) write_report_line(out, r);
}

std::size_t context_for(const Network& net, const CorpusSpec& spec) {
  const std::size_t in = net.config().input_dim;
  require(in % spec.feature_dim == 0 && (in / spec.feature_dim) % 2 == 1, ErrorKind::kShape,
          "model input dim " + std::to_string(in) + " is not a spliced multiple of feature dim " +
              std::to_string(spec.feature_dim));
  return (in / spec.feature_dim - 1) / 2;
}

FrameSet load_frames(const fs::path& data, const std::string& split, std::size_t context) {
  return to_frame_set(read_split(data / split), context);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Small-footprint highway DNN acoustic model toolkit", "hdnn"};
  app.require_subcommand(1);

  // gen-data
  std::string config_path, data_dir, out_path;
  std::optional<std::uint64_t> seed_override;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic HMM corpus from a key=value spec");
  gen->add_option("--config", config_path, "Corpus spec file (key = value)");
  gen->add_option("--out", out_path, "Output corpus directory")->required();
  gen->add_option("--seed", seed_override, "Override the spec's seed");

  // train-ce
  ArchFlags arch;
  std::size_t context = 2;
  auto* tce = app.add_subcommand("train-ce", "Cross-entropy training from scratch");
  tce->add_option("--data", data_dir, "Corpus directory")->required();
  tce->add_option("--out", out_path, "Output model file")->required();
  tce->add_option("--context", context, "Splicing context (+/- frames)")->capture_default_str();
  arch.add(tce);
  TrainFlags ce_flags;
  ce_flags.add(tce, 0.1, 10);

  // distill
  std::string teacher_path, targets_dir;
  Real q = 0.0, temperature = 1.0;
  bool teacher_only_t = false, unlabelled = false;
  auto* dst = app.add_subcommand("distill", "Teacher-student training of a new student model");
  dst->add_option("--data", data_dir, "Corpus directory")->required();
  dst->add_option("--teacher", teacher_path, "Teacher model file");
  dst->add_option("--targets", targets_dir, "Directory of exported teacher posteriors (instead of --teacher)");
  dst->add_option("--out", out_path, "Output model file")->required();
  dst->add_option("--q", q, "Weight of the CE term (hybrid loss when > 0)")->capture_default_str();
  dst->add_option("--temperature", temperature, "Softmax temperature for teacher and student")->capture_default_str();
  dst->add_flag("--teacher-only-temperature", teacher_only_t, "Apply the temperature to the teacher only");
  dst->add_flag("--unlabelled", unlabelled, "Ignore ground-truth labels of the training split");
  dst->add_option("--context", context, "Splicing context when training from --targets")->capture_default_str();
  arch.add(dst);
  TrainFlags kd_flags;
  kd_flags.add(dst, 0.1, 10);

  // make-lattices
  std::vector<std::string> splits{"train"};
  std::size_t branch = 3;
  Real graph_penalty = 0.5;
  std::uint64_t lat_seed = 1;
  auto* mkl = app.add_subcommand("make-lattices", "Attach confusable denominator lattices to a split");
  mkl->add_option("--data", data_dir, "Corpus directory")->required();
  mkl->add_option("--split", splits, "Split(s) to process")->capture_default_str();
  mkl->add_option("--branch", branch, "Arcs per frame (reference + competitors)")->capture_default_str();
  mkl->add_option("--graph-penalty", graph_penalty, "Graph log-weights drawn from [-penalty, 0)")->capture_default_str();
  mkl->add_option("--seed", lat_seed, "Seed")->capture_default_str();

  // train-smbr
  std::string model_path;
  Real p = 0.2, acoustic_scale = 0.1, prior_floor = 1e-8;
  auto* smb = app.add_subcommand("train-smbr", "sMBR fine-tuning smoothed by KD (with --teacher) or CE");
  smb->add_option("--data", data_dir, "Corpus directory (train split must have lattices)")->required();
  smb->add_option("--model", model_path, "Initial model")->required();
  smb->add_option("--teacher", teacher_path, "Teacher for the KD smoothing term");
  smb->add_option("--out", out_path, "Output model file")->required();
  smb->add_option("--p", p, "Weight of the smoothing term")->capture_default_str();
  smb->add_option("--acoustic-scale", acoustic_scale, "Acoustic scale k")->capture_default_str();
  smb->add_option("--prior-floor", prior_floor, "Floor for label-frequency state priors")->capture_default_str();
  smb->add_option("--temperature", temperature, "Temperature of the KD term")->capture_default_str();
  TrainFlags smbr_flags;
  smbr_flags.add(smb, 1e-5, 5);

  // adapt
  std::string mode = "two_pass_ce", scope = "all", adapt_split = "adapt", eval_split;
  auto* adp = app.add_subcommand(
      "adapt",
      "Unsupervised speaker adaptation. two_pass_ce first labels the data with the model's own per-frame "
      "argmax (a stand-in for word-level decoding, which this tool does not do) and then runs CE; "
      "one_pass_kd uses teacher posteriors directly");
  adp->add_option("--data", data_dir, "Corpus directory")->required();
  adp->add_option("--model", model_path, "Speaker-independent model")->required();
  adp->add_option("--teacher", teacher_path, "Teacher (one_pass_kd)");
  adp->add_option("--out", out_path, "Output model file")->required();
  adp->add_option("--mode", mode, "two_pass_ce | one_pass_kd")->capture_default_str();
  adp->add_option("--scope", scope, "all | gates_only")->capture_default_str();
  adp->add_option("--split", adapt_split, "Split holding the adaptation data")->capture_default_str();
  adp->add_option("--eval-split", eval_split, "Split scored after each iteration (default: --split)");
  adp->add_option("--temperature", temperature, "Temperature of the KD targets")->capture_default_str();
  TrainFlags adapt_flags;
  adapt_flags.momentum = 0.0;
  adapt_flags.lr_per_sample = true;
  adapt_flags.add(adp, 2e-4, 5);

  // eval
  std::string split = "cv";
  auto* evl = app.add_subcommand("eval", "Frame error of a model on a split");
  evl->add_option("--data", data_dir, "Corpus directory")->required();
  evl->add_option("--model", model_path, "Model file")->required();
  evl->add_option("--split", split, "Split")->capture_default_str();

  // count-params
  NetworkConfig count_cfg{440, 128, 10, 3927, Architecture::kHighway};
  std::string count_arch = "highway", count_config;
  auto* cnt = app.add_subcommand("count-params", "Number of trainable parameters of an architecture");
  cnt->add_option("--arch", count_arch, "plain | highway")->capture_default_str();
  cnt->add_option("--input", count_cfg.input_dim, "Input dimension")->capture_default_str();
  cnt->add_option("--hidden", count_cfg.hidden_dim, "Hidden units")->capture_default_str();
  cnt->add_option("--layers", count_cfg.num_hidden_layers, "Hidden layers")->capture_default_str();
  cnt->add_option("--out", count_cfg.output_dim, "Output states")->capture_default_str();
  cnt->add_option("--config", count_config, "key = value file with arch/input/hidden/layers/out");
  bool gates_only_count = false;
  cnt->add_flag("--gates-only", gates_only_count, "Count only the tied gate parameters");

  // export-posteriors
  auto* exp = app.add_subcommand("export-posteriors", "Write teacher posteriors for offline distillation");
  exp->add_option("--data", data_dir, "Corpus directory")->required();
  exp->add_option("--teacher", teacher_path, "Teacher model")->required();
  std::string export_split = "train";
  exp->add_option("--split", export_split, "Split")->capture_default_str();
  exp->add_option("--temperature", temperature, "Temperature")->capture_default_str();
  exp->add_option("--out", out_path, "Output directory")->required();

  std::vector<std::string> argv_store{"hdnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'hdnn --help' for usage\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*gen) {
      CorpusSpec spec = config_path.empty() ? CorpusSpec{} : CorpusSpec::from_map(read_key_value_file(config_path));
      if (seed_override) spec.seed = *seed_override;
      const Corpus corpus = gen_corpus(spec);
      write_corpus(out_path, spec, corpus);
      out << "wrote " << corpus.train.size() << " train, " << corpus.cv.size() << " cv, " << corpus.adapt.size()
          << " adapt utterances to " << out_path << '\n';
    } else if (*tce) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      const FrameSet tr = load_frames(data_dir, "train", context);
      const FrameSet cv = load_frames(data_dir, "cv", context);
      NetworkConfig nc{tr.features.cols(), arch.hidden, arch.layers, spec.num_states, parse_architecture(arch.arch)};
      TrainConfig tc = ce_flags.config();
      tc.loss_kind = LossKind::kCe;
      TrainResult r = train_ce(build_network(nc, tc.seed), tr, cv, tc);
      save_model(r.net, out_path);
      emit_reports(r.reports, ce_flags.report, out);
    } else if (*dst) {
      require(teacher_path.empty() != targets_dir.empty(), ErrorKind::kInvalidArgument,
              "distill needs exactly one of --teacher or --targets");
      const CorpusSpec spec = read_corpus_spec(data_dir);
      TrainConfig tc = kd_flags.config();
      tc.loss_kind = q > 0.0 ? LossKind::kHybrid : LossKind::kKd;
      tc.q = q;
      tc.temperature = temperature;
      tc.kd_options.teacher_only_temperature = teacher_only_t;
      if (!teacher_path.empty()) {
        const Network teacher = load_model(teacher_path);
        const std::size_t ctx = context_for(teacher, spec);
        FrameSet tr = load_frames(data_dir, "train", ctx);
        if (unlabelled) tr.labels.clear();
        const FrameSet cv = load_frames(data_dir, "cv", ctx);
        NetworkConfig nc{tr.features.cols(), arch.hidden, arch.layers, spec.num_states, parse_architecture(arch.arch)};
        TrainResult r = distill(nc, teacher, tr, cv, tc);
        save_model(r.net, out_path);
        emit_reports(r.reports, kd_flags.report, out);
      } else {
        const auto utts = read_split(fs::path(data_dir) / "train");
        SoftTargets all;
        std::vector<Matrix> parts;
        std::size_t rows = 0, cols = 0;
        for (const auto& u : utts) {
          SoftTargets s = load_soft_targets(fs::path(targets_dir) / (u.id + ".post"));
          require(s.posteriors.rows() == u.features.rows(), ErrorKind::kShape, "soft targets do not match " + u.id);
          all.temperature_used = s.temperature_used;
          rows += s.posteriors.rows();
          cols = s.posteriors.cols();
          parts.push_back(std::move(s.posteriors));
        }
        all.posteriors = Matrix(rows, cols);
        std::size_t at = 0;
        for (const auto& m : parts) {
          std::copy(m.data().begin(), m.data().end(), all.posteriors.data().begin() + static_cast<std::ptrdiff_t>(at));
          at += m.size();
        }
        const std::size_t ctx = context;
        FrameSet tr = to_frame_set(utts, ctx);
        if (unlabelled) tr.labels.clear();
        const FrameSet cv = load_frames(data_dir, "cv", ctx);
        NetworkConfig nc{tr.features.cols(), arch.hidden, arch.layers, spec.num_states, parse_architecture(arch.arch)};
        TrainResult r = distill_offline(build_network(nc, tc.seed), all, tr, cv, tc);
        save_model(r.net, out_path);
        emit_reports(r.reports, kd_flags.report, out);
      }
    } else if (*mkl) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      for (const auto& s : splits) {
        auto utts = read_split(fs::path(data_dir) / s);
        for (auto& u : utts) {
          Rng rng(lat_seed, "lattice/" + u.id);
          u.lattice = build_lattice(u.alignment, spec.num_states, branch, rng, graph_penalty);
        }
        write_split(fs::path(data_dir) / s, utts);
        out << "built " << utts.size() << " lattices for " << s << '\n';
      }
    } else if (*smb) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      const Network init = load_model(model_path);
      const std::size_t ctx = context_for(init, spec);
      const auto utts = read_split(fs::path(data_dir) / "train");
      const auto seqs = to_sequence_set(utts, ctx);
      const FrameSet cv = load_frames(data_dir, "cv", ctx);
      std::vector<int> labels;
      for (const auto& u : utts) labels.insert(labels.end(), u.alignment.begin(), u.alignment.end());
      TrainConfig tc = smbr_flags.config();
      tc.loss_kind = LossKind::kSmbrKd;
      tc.p = p;
      tc.temperature = temperature;
      tc.smbr.acoustic_scale = acoustic_scale;
      tc.smbr.prior_floor = prior_floor;
      tc.smbr.state_priors = estimate_state_priors(labels, spec.num_states, prior_floor);
      std::optional<Network> teacher;
      if (!teacher_path.empty()) teacher = load_model(teacher_path);
      tc.sequence_regularizer = teacher ? SequenceRegularizer::kKd : SequenceRegularizer::kCe;
      TrainResult r = sequence_train(init, seqs, teacher ? &*teacher : nullptr, cv, tc);
      save_model(r.net, out_path);
      emit_reports(r.reports, smbr_flags.report, out);
    } else if (*adp) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      const Network si = load_model(model_path);
      const std::size_t ctx = context_for(si, spec);
      const FrameSet data = load_frames(data_dir, adapt_split, ctx);
      const FrameSet eval = load_frames(data_dir, eval_split.empty() ? adapt_split : eval_split, ctx);
      TrainConfig tc = adapt_flags.config();
      tc.update_scope = parse_update_scope(scope);
      tc.temperature = temperature;
      const AdaptMode m = parse_adapt_mode(mode);
      tc.loss_kind = m == AdaptMode::kTwoPassCe ? LossKind::kCe : LossKind::kKd;
      std::optional<Network> teacher;
      if (!teacher_path.empty()) teacher = load_model(teacher_path);
      TrainResult r = adapt(si, data.features, m, teacher ? &*teacher : nullptr, eval, tc);
      save_model(r.net, out_path);
      emit_reports(r.reports, adapt_flags.report, out);
    } else if (*evl) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      const Network net = load_model(model_path);
      const FrameSet data = load_frames(data_dir, split, context_for(net, spec));
      const Real fe = evaluate_frame_error(net, data);
      std::ostringstream os;
      os.precision(6);
      os << std::fixed << fe;
      out << os.str() << '\n';
    } else if (*cnt) {
      NetworkConfig c = count_cfg;
      c.architecture = parse_architecture(count_arch);
      if (!count_config.empty()) {
        const auto kv = read_key_value_file(count_config);
        auto get = [&](const char* key, std::size_t& dst) {
          if (auto it = kv.find(key); it != kv.end()) dst = static_cast<std::size_t>(std::stoull(it->second));
        };
        if (auto it = kv.find("arch"); it != kv.end()) c.architecture = parse_architecture(it->second);
        get("input", c.input_dim);
        get("hidden", c.hidden_dim);
        get("layers", c.num_hidden_layers);
        get("out", c.output_dim);
      }
      c.validate();
      out << (gates_only_count ? count_gate_params(c) : count_params(c)) << '\n';
    } else if (*exp) {
      const CorpusSpec spec = read_corpus_spec(data_dir);
      const Network teacher = load_model(teacher_path);
      const std::size_t ctx = context_for(teacher, spec);
      fs::create_directories(out_path);
      const auto utts = read_split(fs::path(data_dir) / export_split);
      for (const auto& u : utts) {
        save_soft_targets(teacher_targets(teacher, splice(u.features, ctx), temperature),
                          fs::path(out_path) / (u.id + ".post"));
      }
      out << "exported posteriors for " << utts.size() << " utterances\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hdnn
