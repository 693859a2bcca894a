#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "maris/data.hpp"
#include "maris/error.hpp"
#include "maris/eval.hpp"
#include "maris/prompt_bank.hpp"
#include "maris/saim.hpp"
#include "maris/synth.hpp"
#include "maris/trainer.hpp"

namespace maris::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SelectionFlags {
  std::optional<std::string> strategy;
  std::optional<int> top_n;
  std::optional<double> lambda;
  std::optional<double> alpha_enh;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out;

  // synth
  std::size_t images = 20, classes = 6, shapes_min = 1, shapes_max = 3, size = 64;

  // select-templates / train / eval
  std::string annotations;
  std::string class_list;
  SelectionFlags sel;

  // train
  std::string config;
  std::optional<std::string> mode;
  std::optional<int> steps, batch_size, queries, latent, layers;
  std::optional<double> step_size;
  std::optional<std::string> optimizer;
  std::string train_classes;

  // eval
  std::string checkpoint;
  std::string split;
  std::string vocab;
  std::optional<double> score_floor;
  bool topn_sweep = false;

  // report
  std::string report, report2;
  std::size_t top_k = 10;
};

void add_selection_flags(CLI::App* app, SelectionFlags& s) {
  app->add_option("--strategy", s.strategy, "Template selection strategy")
      ->check(CLI::IsMember({"mean-all", "mixed", "weighted"}));
  app->add_option("--topn", s.top_n, "Top-N templates kept per class (1..60)");
  app->add_option("--lambda", s.lambda, "Mixed strategy: weight of the top-N average, in [0,1]");
  app->add_option("--alpha-enh", s.alpha_enh, "Weighted strategy: enhancement factor (> 1)");
}

struct App {
  Options o;
  CLI::App app{"Open-vocabulary underwater instance segmentation at desk scale", "maris"};
  CLI::App* synth;
  CLI::App* select;
  CLI::App* train;
  CLI::App* eval;
  CLI::App* report;

  App() {
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MARIS_VERSION));

    synth = app.add_subcommand("synth", "Render a synthetic shapes fixture with annotations");
    synth->add_option("--seed", o.seed, "Random seed")->required();
    synth->add_option("--images", o.images, "Number of images")->capture_default_str();
    synth->add_option("--classes", o.classes, "Number of classes (at most 12)")->capture_default_str();
    synth->add_option("--shapes-min", o.shapes_min, "Fewest shapes per image")->capture_default_str();
    synth->add_option("--shapes-max", o.shapes_max, "Most shapes per image")->capture_default_str();
    synth->add_option("--size", o.size, "Image height and width in pixels")->capture_default_str();
    synth->add_option("--out", o.out, "Output directory")->required();

    select = app.add_subcommand("select-templates",
                                "Pick prompt templates per class by the single-image rule");
    select->add_option("--annotations", o.annotations, "Annotation file")->required()->check(CLI::ExistingFile);
    select->add_option("--classes", o.class_list, "Comma-separated class names (default: all)");
    add_selection_flags(select, o.sel);
    select->add_option("--seed", o.seed, "Random seed for image sampling")->required();
    select->add_option("--out", o.out, "Output directory")->required();

    train = app.add_subcommand("train", "Train the model on an annotation file");
    train->add_option("--config", o.config, "Run config (JSON); flags override it")->check(CLI::ExistingFile);
    train->add_option("--annotations", o.annotations, "Training annotation file")->required()->check(CLI::ExistingFile);
    train->add_option("--mode", o.mode, "Task mode")->check(CLI::IsMember({"in-domain", "cross-domain"}));
    train->add_option("--seed", o.seed, "Random seed (required here or in the config)");
    train->add_option("--steps", o.steps, "Optimizer steps");
    train->add_option("--batch-size", o.batch_size, "Images per step");
    train->add_option("--step-size", o.step_size, "Optimizer step size");
    train->add_option("--optimizer", o.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}));
    train->add_option("--queries", o.queries, "Number of queries N_Q");
    train->add_option("--latent", o.latent, "Shared latent width C_s");
    train->add_option("--layers", o.layers, "Bridge layers");
    train->add_option("--train-classes", o.train_classes,
                      "Comma-separated classes to supervise (default: all)");
    add_selection_flags(train, o.sel);
    train->add_option("--out", o.out, "Output directory")->required();

    eval = app.add_subcommand("eval", "Run inference and grouped mask AP on an annotation file");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--annotations", o.annotations, "Evaluation annotation file")->required()->check(CLI::ExistingFile);
    eval->add_option("--split", o.split, "Split file (default: derived from training and evaluation classes)")
        ->check(CLI::ExistingFile);
    eval->add_option("--vocab", o.vocab, "Vocabulary file, one class name per line (default: evaluation categories)")
        ->check(CLI::ExistingFile);
    add_selection_flags(eval, o.sel);
    eval->add_option("--score-floor", o.score_floor, "Drop predictions scoring below this");
    eval->add_flag("--topn-sweep", o.topn_sweep, "Also sweep TopN over 1,2,5,10,20,50,80");
    eval->add_option("--seed", o.seed, "Random seed for template sampling (default: checkpoint seed)");
    eval->add_option("--out", o.out, "Output directory")->required();

    report = app.add_subcommand("report", "Rank classes by AP and draw bar charts");
    report->add_option("--report", o.report, "Evaluation report (report.json)")->required()->check(CLI::ExistingFile);
    report->add_option("--report2", o.report2, "Second report for paired in/cross-domain columns")
        ->check(CLI::ExistingFile);
    report->add_option("--topk", o.top_k, "Entries per best/worst list")->capture_default_str();
    report->add_option("--out", o.out, "Output directory")->required();
  }
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw DataError("'" + p.string() + "': " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<std::string> read_vocab(const fs::path& p) {
  std::vector<std::string> out;
  std::stringstream ss(read_text(p));
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw DataError("vocabulary file '" + p.string() + "' is empty");
  return out;
}

void apply_selection(const SelectionFlags& f, saim::SelectionConfig& c) {
  if (f.strategy) c.strategy = saim::parse_strategy(*f.strategy);
  if (f.top_n) c.top_n = *f.top_n;
  if (f.lambda) c.lambda = *f.lambda;
  if (f.alpha_enh) c.alpha_enh = *f.alpha_enh;
  c.validate();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const json& config) {
  json m = {{"tool", "maris"},
            {"version", MARIS_VERSION},
            {"command", command},
            {"seed", seed},
            {"config", config},
            {"created_utc", utc_now()}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_synth(const Options& o, std::ostream& out) {
  data::SynthSpec spec;
  spec.n_images = o.images;
  spec.n_classes = o.classes;
  spec.shapes_min = o.shapes_min;
  spec.shapes_max = o.shapes_max;
  spec.height = spec.width = o.size;
  const auto fixture = data::synth_fixture(*o.seed, spec);
  data::write_fixture(fixture, o.out);
  write_manifest(o.out, "synth", *o.seed,
                 {{"images", o.images}, {"classes", o.classes}, {"shapes_min", o.shapes_min},
                  {"shapes_max", o.shapes_max}, {"size", o.size}});
  out << "wrote " << fixture.index.images().size() << " images, " << fixture.instance_count
      << " instances to " << o.out << "\n";
  return kExitOk;
}

int cmd_select(const Options& o, std::ostream& out) {
  const auto dataset = data::DatasetIndex::load(o.annotations);
  saim::SelectionConfig cfg;
  cfg.seed = *o.seed;
  apply_selection(o.sel, cfg);
  const auto names = o.class_list.empty() ? dataset.category_names() : split_list(o.class_list);
  EncoderConfig enc;
  const EncoderSet encoders = make_stub_encoders(enc);
  const auto result = trainer::build_class_embeddings(dataset, names, encoders, cfg);
  const auto bank = saim::build_prompt_bank();
  const auto ids = bank.template_ids();
  const auto texts = bank.templates();

  json classes = json::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    json chosen = json::array();
    for (std::size_t t : result.top_indices[0][k])
      chosen.push_back({{"id", ids[t]}, {"template", texts[t]}});
    const auto sampled = saim::sample_image_for_class(dataset, names[k], cfg.seed);
    classes.push_back({{"class", names[k]},
                       {"sampled_image", sampled ? json(*sampled) : json(nullptr)},
                       {"templates", chosen}});
  }
  json report = {{"selection", cfg}, {"classes", classes}, {"warnings", result.warnings}};
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "templates.json", report.dump(2) + "\n");
  write_manifest(o.out, "select-templates", cfg.seed,
                 {{"annotations", o.annotations}, {"selection", cfg}, {"encoder", enc}});
  for (const auto& w : result.warnings) out << "warning: " << w << "\n";
  out << "selected templates for " << names.size() << " classes\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  json cfg_json = o.config.empty() ? json::object() : parse_json_file(o.config);
  if (o.seed) cfg_json["seed"] = *o.seed;
  if (!cfg_json.contains("seed")) throw ConfigError("train: a seed is required (--seed or config)");
  // Per-module seeds follow the run seed unless the config pins them.
  if (o.seed) {
    cfg_json["selection"]["seed"] = *o.seed;
    cfg_json["loss"]["seed"] = *o.seed;
  }
  trainer::RunConfig cfg = trainer::run_config_from_json(cfg_json);
  if (o.mode) cfg.mode = data::parse_task_mode(*o.mode);
  if (o.steps) cfg.optimizer.steps = *o.steps;
  if (o.batch_size) cfg.optimizer.batch_size = *o.batch_size;
  if (o.step_size) cfg.optimizer.step_size = *o.step_size;
  if (o.optimizer) cfg.optimizer.kind = *o.optimizer;
  if (o.queries) cfg.gpem.num_queries = *o.queries;
  if (o.latent) cfg.gpem.latent_dim = *o.latent;
  if (o.layers) cfg.gpem.num_layers = *o.layers;
  if (!o.train_classes.empty()) cfg.train_classes = split_list(o.train_classes);
  apply_selection(o.sel, cfg.selection);
  cfg.validate();

  const auto dataset = data::DatasetIndex::load(o.annotations);
  const auto ckpt = trainer::train(cfg, dataset);
  const fs::path dir(o.out);
  trainer::save_checkpoint(ckpt, dir / "checkpoint");
  write_text(dir / "loss_history.json", json(ckpt.loss_history).dump(2) + "\n");
  write_manifest(dir, "train", cfg.seed,
                 {{"annotations", o.annotations}, {"run", trainer::run_config_to_json(cfg)}});
  if (!ckpt.loss_history.empty())
    out << "loss " << ckpt.loss_history.front() << " -> " << ckpt.loss_history.back() << " over "
        << ckpt.loss_history.size() << " steps\n";
  out << "checkpoint written to " << (dir / "checkpoint").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto ckpt = trainer::load_checkpoint(o.checkpoint);
  const auto dataset = data::DatasetIndex::load(o.annotations);
  const auto vocabulary = o.vocab.empty() ? dataset.category_names() : read_vocab(o.vocab);
  const data::ClassSplit split = o.split.empty()
                                     ? data::build_class_split(ckpt.train_vocabulary, vocabulary)
                                     : data::load_split(o.split);
  // Rejects cross-domain runs whose classes overlap.
  data::make_task_config(ckpt.config.mode, o.checkpoint, o.annotations, split);

  saim::SelectionConfig sel = ckpt.config.selection;
  sel.seed = o.seed.value_or(ckpt.config.seed);
  apply_selection(o.sel, sel);
  trainer::InferenceOptions inf;
  inf.score_floor = o.score_floor.value_or(ckpt.config.score_floor);

  const EncoderSet encoders = make_stub_encoders(ckpt.config.encoder);
  if (encoders.parameter_checksum() != ckpt.encoder_checksum)
    throw DataError("checkpoint was trained with different frozen encoders");
  const model::Model m = trainer::restore_model(ckpt);
  const auto encoded = trainer::encode_dataset(encoders, dataset);
  const auto result =
      trainer::evaluate_model(m, encoders, dataset, encoded, vocabulary, split, sel, inf);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text(dir / "predictions.json", eval::predictions_to_json(result.predictions).dump(2) + "\n");
  write_text(dir / "report.json", eval::report_to_json(result.report).dump(2) + "\n");
  const std::string table = eval::format_report_table(result.report);
  write_text(dir / "report.txt", table);
  out << table;
  json config = {{"checkpoint", o.checkpoint}, {"annotations", o.annotations},
                 {"split", data::split_to_json(split)}, {"vocabulary", vocabulary},
                 {"selection", sel}, {"score_floor", inf.score_floor}, {"topn_sweep", o.topn_sweep}};
  if (o.topn_sweep) {
    const auto rows = trainer::topn_sweep(m, encoders, dataset, encoded, vocabulary, split, sel,
                                          trainer::kTopNGrid, inf);
    write_text(dir / "topn_sweep.json", trainer::sweep_to_json(rows).dump(2) + "\n");
    const std::string sweep = trainer::format_sweep_table(rows);
    write_text(dir / "topn_sweep.txt", sweep);
    out << sweep;
  }
  write_manifest(dir, "eval", sel.seed, config);
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto first = eval::report_from_json(parse_json_file(o.report));
  std::optional<eval::EvalReport> second;
  if (!o.report2.empty()) second = eval::report_from_json(parse_json_file(o.report2));
  const auto ranking = eval::per_class_report(first, o.top_k, second ? &*second : nullptr);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text(dir / "ranking.json", eval::ranking_to_json(ranking).dump(2) + "\n");
  const std::string l1 = second ? "in-domain" : "mAP", l2 = "cross-domain";
  write_text(dir / "best.svg", eval::bar_chart_svg("Top-" + std::to_string(ranking.best.size()) +
                                                       " best classes",
                                                   ranking.best, l1, l2));
  write_text(dir / "worst.svg", eval::bar_chart_svg("Top-" + std::to_string(ranking.worst.size()) +
                                                        " worst classes",
                                                    ranking.worst, l1, l2));
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  auto table = [&](const char* title, const std::vector<eval::RankedClass>& v) {
    os << title << "\n";
    for (const auto& e : v) {
      os << "  " << std::left << std::setw(28) << e.name << std::right << std::setw(8) << e.ap;
      if (e.paired_ap) os << std::setw(8) << *e.paired_ap;
      os << "\n";
    }
  };
  table("best", ranking.best);
  table("worst", ranking.worst);
  if (ranking.notice) os << "note: " << *ranking.notice << "\n";
  write_text(dir / "ranking.txt", os.str());
  write_manifest(dir, "report", 0,
                 {{"report", o.report}, {"report2", o.report2}, {"topk", o.top_k}});
  out << os.str();
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  App a;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    a.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = a.app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (a.synth->parsed()) return cmd_synth(a.o, out);
    if (a.select->parsed()) return cmd_select(a.o, out);
    if (a.train->parsed()) return cmd_train(a.o, out);
    if (a.eval->parsed()) return cmd_eval(a.o, out);
    if (a.report->parsed()) return cmd_report(a.o, out);
  } catch (const NumericError& e) {
    err << "numeric error at step " << e.step() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

std::vector<std::string> subcommands() {
  return {"synth", "select-templates", "train", "eval", "report"};
}

std::vector<FlagDoc> flags_of(const std::string& subcommand) {
  App a;
  std::vector<FlagDoc> out;
  for (const CLI::Option* opt : a.app.get_subcommand(subcommand)->get_options()) {
    for (const auto& name : opt->get_lnames()) out.push_back({"--" + name, opt->get_description()});
  }
  return out;
}

std::string help_text(const std::string& subcommand) {
  App a;
  return a.app.get_subcommand(subcommand)->help();
}

}  // namespace maris::cli
