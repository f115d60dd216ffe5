// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "memprobe/checkpoint.hpp"
#include "memprobe/corpus.hpp"
#include "memprobe/error.hpp"
#include "memprobe/eval.hpp"
#include "memprobe/prompt.hpp"
#include "memprobe/runtime.hpp"
#include "memprobe/target_training.hpp"
#include "memprobe/verify.hpp"

namespace memprobe {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Every tunable of every command. Each subcommand binds the subset it uses.
struct ExperimentConfig {
  std::string config_file;

  // Paths.
  std::string out;
  std::string corpus;
  std::string target;
  std::string resume;
  std::string prompt;
  std::string csp;
  std::string dynamic;
  std::string out_csv;
  std::string out_json;
  std::string audit;

  std::uint64_t seed = 0;

  // Corpus.
  std::int64_t vocab_size = 512;
  std::int64_t seq_len = 48;
  std::string tiers = "200x1,100x16,100x64";
  std::int64_t n_train = 200;
  std::int64_t n_test = 100;
  std::optional<std::uint64_t> split_seed;

  // Target model and its training.
  TransformerConfig model;
  std::string ffn_variant = "plain";
  TargetTrainConfig target_train;
  std::string filler = "random";

  // Prompt methods.
  std::string method;
  std::int64_t prompt_len = 8;
  std::int64_t blocks = 2;
  std::string csp_init = "vocab";
  double init_std = 0.02;
  PromptTrainConfig prompt_train;

  // Evaluation.
  EvalConfig eval;
  std::string fractional_mode = "positionwise";
};

const std::set<std::string> kPathOptions = {"--config", "--out",      "--corpus",  "--target",
                                            "--resume", "--prompt",   "--csp",     "--dynamic",
                                            "--out-csv", "--out-json", "--audit"};

void log_line(std::ostream& out, const json& j) { out << j.dump() << "\n" << std::flush; }

json typed_value(const std::string& text) {
  if (text.empty()) return nullptr;
  std::int64_t i = 0;
  auto [iend, ierr] = std::from_chars(text.data(), text.data() + text.size(), i);
  if (ierr == std::errc() && iend == text.data() + text.size()) return i;
  double d = 0;
  auto [dend, derr] = std::from_chars(text.data(), text.data() + text.size(), d);
  if (derr == std::errc() && dend == text.data() + text.size()) return d;
  return text;
}

/// Effective option values of a subcommand, paths excluded so artifacts do
/// not depend on where they were written.
json effective_config(const CLI::App& sub) {
  json j = json::object();
  j["command"] = sub.get_name();
  for (const auto* opt : sub.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.rfind("--", 0) != 0 || name == "--help" || kPathOptions.count(name)) continue;
    const std::string value = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    j[name.substr(2)] = typed_value(value);
  }
  return j;
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw ConfigError(flag + " is required");
  if (!fs::exists(path)) throw ConfigError(flag + ": file not found: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<DupTier> parse_tiers(const std::string& spec) {
  std::vector<DupTier> tiers;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      DupTier t;
      t.count = std::stoll(item.substr(0, x), &used);
      if (used != x) throw std::invalid_argument(item);
      t.multiplicity = std::stoll(item.substr(x + 1), &used);
      if (used != item.size() - x - 1) throw std::invalid_argument(item);
      tiers.push_back(t);
    } catch (const std::logic_error&) {
      throw ConfigError("--tiers: expected COUNTxMULTIPLICITY items, got '" + item + "'");
    }
  }
  if (tiers.empty()) throw ConfigError("--tiers: no duplication tiers given");
  return tiers;
}

FfnVariant parse_ffn_variant(const std::string& name) {
  if (name == "plain") return FfnVariant::plain;
  if (name == "gated") return FfnVariant::gated;
  throw ConfigError("--ffn-variant: expected plain or gated, got '" + name + "'");
}

// ---------------------------------------------------------------- commands

int cmd_gen_corpus(const ExperimentConfig& c, const CLI::App& sub, std::ostream& out) {
  if (c.out.empty()) throw ConfigError("--out is required");
  if (c.vocab_size < 2) throw ConfigError("--vocab-size must be >= 2, got " + std::to_string(c.vocab_size));
  if (c.seq_len < 2) throw ConfigError("--seq-len must be >= 2, got " + std::to_string(c.seq_len));
  const auto tiers = parse_tiers(c.tiers);
  std::int64_t n_unique = 0;
  for (const auto& t : tiers) n_unique += t.count;
  auto corpus = generate_corpus(c.vocab_size, n_unique, c.seq_len, tiers, c.seed);
  if (c.n_train + c.n_test > n_unique) {
    throw ConfigError("--n-train plus --n-test exceeds the " + std::to_string(n_unique) +
                      " unique sequences");
  }
  corpus.splits = sample_splits(corpus, c.n_train, c.n_test, c.split_seed.value_or(c.seed));
  auto j = to_json(corpus);
  j["config"] = effective_config(sub);
  write_text(c.out, j.dump() + "\n");
  log_line(out, {{"event", "corpus_written"},
                 {"sequences", corpus.sequences.size()},
                 {"train", corpus.splits.train_ids.size()},
                 {"test", corpus.splits.test_ids.size()},
                 {"checksum", corpus.checksum()}});
  return kExitOk;
}

int cmd_train_target(const ExperimentConfig& c, const CLI::App& sub, std::ostream& out) {
  require_file(c.corpus, "--corpus");
  if (c.out.empty()) throw ConfigError("--out is required");
  const auto corpus = load_corpus(c.corpus);

  TargetLM lm;
  std::int64_t start_epoch = 0;
  if (!c.resume.empty()) {
    require_file(c.resume, "--resume");
    auto loaded = load_checkpoint(c.resume);
    lm = std::move(loaded.model);
    start_epoch = loaded.header.value("epochs_completed", std::int64_t{0});
    log_line(out, {{"event", "resume"}, {"epochs_completed", start_epoch}});
  } else {
    auto config = c.model;
    config.vocab_size = corpus.vocab_size;
    config.ffn_variant = parse_ffn_variant(c.ffn_variant);
    try {
      config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("model flags: ") + e.what());
    }
    lm = TargetLM::initialize(config, c.target_train.seed);
  }

  auto train_config = c.target_train;
  train_config.filler = parse_filler_mode(c.filler);
  const auto result = train_target(lm, corpus, train_config, start_epoch, [&](const TargetEpochLog& l) {
    log_line(out, {{"event", "epoch"},
                   {"epoch", l.epoch},
                   {"train_loss", l.train_loss},
                   {"top_tier_accuracy", l.top_tier_accuracy},
                   {"seconds", l.seconds}});
  });
  const double accuracy = result.epochs.empty()
                              ? teacher_forced_accuracy(lm, corpus, top_tier_ids(corpus))
                              : result.epochs.back().top_tier_accuracy;
  json extra = {{"epochs_completed", result.epochs_completed},
                {"top_tier_accuracy", accuracy},
                {"reached_stop_accuracy", result.reached_stop_accuracy ||
                                              (c.target_train.stop_accuracy > 0 &&
                                               accuracy >= c.target_train.stop_accuracy)},
                {"corpus_checksum", corpus.checksum()},
                {"effective_config", effective_config(sub)}};
  save_checkpoint(lm, c.out, extra);
  log_line(out, {{"event", "target_written"},
                 {"epochs_completed", result.epochs_completed},
                 {"top_tier_accuracy", accuracy},
                 {"checksum", lm.weights_checksum()}});
  return kExitOk;
}

int cmd_train_prompt(const ExperimentConfig& c, const CLI::App& sub, std::ostream& out) {
  const auto tag = parse_method_tag(c.method);
  if (tag != MethodTag::csp && tag != MethodTag::dynamic) {
    throw MethodError("--method: only csp and dynamic are trainable, got '" + c.method + "'");
  }
  require_file(c.target, "--target");
  require_file(c.corpus, "--corpus");
  if (c.out.empty()) throw ConfigError("--out is required");
  const auto corpus = load_corpus(c.corpus);
  auto target = load_checkpoint(c.target).model;
  target.set_trainable(false);
  if (c.prompt_train.prefix_len >= corpus.seq_len) {
    throw ConfigError("--prefix-len must be smaller than the corpus sequence length");
  }
  const std::uint64_t before = target.weights_checksum();
  const auto& train_ids = corpus.splits.train_ids;
  const auto on_epoch = [&](const PromptEpochLog& l) {
    log_line(out, {{"event", "epoch"}, {"method", c.method}, {"epoch", l.epoch}, {"loss", l.loss}});
  };

  PromptTrainResult result;
  ExtractionMethod method;
  if (tag == MethodTag::csp) {
    CspInit init = CspInit::vocab;
    if (c.csp_init == "normal") {
      init = CspInit::normal;
    } else if (c.csp_init != "vocab") {
      throw ConfigError("--csp-init: expected vocab or normal, got '" + c.csp_init + "'");
    }
    auto csp = init_constant_prompt(target, c.prompt_len, init, c.prompt_train.seed, c.init_std);
    result = train_csp(csp, target, corpus, train_ids, c.prompt_train, on_epoch);
    method = ExtractionMethod::csp(csp);
  } else {
    auto g = init_generator(target, c.blocks, c.prompt_len, c.prompt_train.seed, c.init_std);
    result = train_generator(g, target, corpus, train_ids, c.prompt_train, on_epoch);
    method = ExtractionMethod::dynamic(g);
  }

  const std::set<std::int64_t> allowed(train_ids.begin(), train_ids.end());
  const bool subset = std::all_of(result.consumed_ids.begin(), result.consumed_ids.end(),
                                  [&](auto id) { return allowed.count(id) > 0; });
  const json audit = {{"event", "audit"},
                      {"consumed_ids", result.consumed_ids},
                      {"subset_of_train", subset},
                      {"target_checksum_before", before},
                      {"target_checksum_after", target.weights_checksum()}};
  log_line(out, audit);
  if (!c.audit.empty()) write_text(c.audit, audit.dump() + "\n");
  if (!subset) throw ContractError("prompt training read ids outside the training split");

  save_method(method, c.out,
              {{"final_train_loss", result.final_loss},
               {"loss_curve", result.loss_curve},
               {"seed", c.prompt_train.seed},
               {"target_checksum", before},
               {"corpus_checksum", corpus.checksum()},
               {"effective_config", effective_config(sub)}});
  log_line(out, {{"event", "prompt_written"},
                 {"method", c.method},
                 {"initial_loss", result.loss_curve.front()},
                 {"final_train_loss", result.final_loss}});
  return kExitOk;
}

EvalConfig eval_config(const ExperimentConfig& c) {
  EvalConfig e = c.eval;
  e.fractional_mode = parse_fractional_mode(c.fractional_mode);
  e.seed = c.seed;
  e.threads = default_thread_count();
  return e;
}

ExtractionMethod load_trainable(const std::string& path, const std::string& flag,
                                const TargetLM& target, MethodTag expected) {
  require_file(path, flag);
  auto loaded = load_method(path, target);
  if (loaded.method.tag != expected) {
    throw MethodError(flag + ": checkpoint holds method " + to_string(loaded.method.tag) +
                      ", expected " + to_string(expected));
  }
  return std::move(loaded.method);
}

int cmd_evaluate(const ExperimentConfig& c, const CLI::App& sub, std::ostream& out) {
  const auto tag = parse_method_tag(c.method);
  require_file(c.target, "--target");
  require_file(c.corpus, "--corpus");
  const auto corpus = load_corpus(c.corpus);
  const auto target = load_checkpoint(c.target).model;
  const auto config = eval_config(c);

  ExtractionMethod method;
  switch (tag) {
    case MethodTag::none: method = ExtractionMethod::none(); break;
    case MethodTag::hard_const: method = ExtractionMethod::hard_const(c.prompt_len); break;
    case MethodTag::hard_dyn: method = ExtractionMethod::hard_dyn(c.prompt_len); break;
    case MethodTag::csp:
    case MethodTag::dynamic: method = load_trainable(c.prompt, "--prompt", target, tag); break;
  }
  const auto& test_ids = corpus.splits.test_ids;
  std::vector<ExtractionReport> reports{evaluate_method(method, target, corpus, test_ids, config)};
  if (tag != MethodTag::none) {
    reports.push_back(evaluate_method(ExtractionMethod::none(), target, corpus, test_ids, config));
  }
  apply_gains(reports);
  auto j = to_json(reports.front());
  j["config"] = effective_config(sub);
  if (!c.out.empty()) write_text(c.out, j.dump(2) + "\n");
  out << format_table(std::span<const ExtractionReport>(reports).first(1));
  return kExitOk;
}

int cmd_compare(const ExperimentConfig& c, const CLI::App& sub, std::ostream& out) {
  require_file(c.target, "--target");
  require_file(c.corpus, "--corpus");
  require_file(c.csp, "--csp");
  require_file(c.dynamic, "--dynamic");
  const auto corpus = load_corpus(c.corpus);
  const auto target = load_checkpoint(c.target).model;
  const std::vector<ExtractionMethod> methods{
      ExtractionMethod::none(), ExtractionMethod::hard_const(c.prompt_len),
      ExtractionMethod::hard_dyn(c.prompt_len),
      load_trainable(c.csp, "--csp", target, MethodTag::csp),
      load_trainable(c.dynamic, "--dynamic", target, MethodTag::dynamic)};
  const auto reports = compare_all(target, corpus, methods, corpus.splits.test_ids, eval_config(c));
  json j = {{"format_version", kReportFormatVersion},
            {"config", effective_config(sub)},
            {"reports", json::array()}};
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  if (!c.out_json.empty()) write_text(c.out_json, j.dump(2) + "\n");
  if (!c.out_csv.empty()) write_text(c.out_csv, comparison_csv(reports));
  out << format_table(reports);
  return kExitOk;
}

int cmd_verify(const ExperimentConfig& c, std::ostream& out) {
  bool all = true;
  for (const auto& r : run_invariant_suite(c.seed)) {
    log_line(out, {{"event", "check"}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    all = all && r.passed;
  }
  log_line(out, {{"event", "verify_done"}, {"passed", all}});
  return all ? kExitOk : kExitNumeric;
}

// ------------------------------------------------------------ config files

std::string json_to_arg(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& item : v) {
      if (!s.empty()) s += ",";
      if (item.is_array()) {
        std::string inner;
        for (const auto& x : item) inner += (inner.empty() ? "" : "x") + json_to_arg(x);
        s += inner;
      } else {
        s += json_to_arg(item);
      }
    }
    return s;
  }
  return v.dump();
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

/// Turns the JSON config into "--flag value" pairs for `sub`. Top-level keys
/// apply when the command has the flag; keys in a section named after the
/// command must all be known.
std::vector<std::string> config_args(const std::string& path, CLI::App& sub) {
  if (!fs::exists(path)) throw ConfigError("--config: file not found: " + path);
  json j;
  try {
    const auto bytes = read_file_bytes(path);
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError("--config: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("--config: top level must be an object");
  std::vector<std::string> args;
  const auto add = [&](const std::string& key, const json& value, bool strict) {
    const auto flag = flag_name(key);
    if (flag == "--config") return;
    if (sub.get_option_no_throw(flag) == nullptr) {
      if (strict) throw ConfigError("--config: unknown key '" + key + "' for " + sub.get_name());
      return;
    }
    if (value.is_null()) return;
    args.push_back(flag);
    args.push_back(json_to_arg(value));
  };
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) continue;
    add(key, value, false);
  }
  if (j.contains(sub.get_name())) {
    if (!j[sub.get_name()].is_object()) throw ConfigError("--config: section must be an object");
    for (const auto& [key, value] : j[sub.get_name()].items()) add(key, value, true);
  }
  return args;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TrainingError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const IndexError*>(&e)) {
    return kExitConfig;
  }
  return kExitIo;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  ExperimentConfig c;
  CLI::App app{"memprobe: memorised-data extraction experiments on small causal language models"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  const auto add_config = [&](CLI::App* s) {
    s->add_option("--config", c.config_file, "JSON file with option values; flags override it");
  };
  const auto add_eval = [&](CLI::App* s) {
    s->add_option("--prompt-len", c.prompt_len, "Hard-prompt length N");
    s->add_option("--prefix-len", c.eval.prefix_len, "Prefix length L");
    s->add_option("--suffix-len", c.eval.suffix_len, "Suffix length S");
    s->add_option("--fractional-mode", c.fractional_mode, "positionwise or prefix");
    s->add_option("--chunk-size", c.eval.chunk_size, "Sequences per evaluation work item");
    s->add_option("--seed", c.seed, "Seed recorded in the report");
  };

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus with train/test splits");
  add_config(gen);
  gen->add_option("--out", c.out, "Output corpus JSON");
  gen->add_option("--seed", c.seed, "Corpus seed");
  gen->add_option("--vocab-size", c.vocab_size, "Vocabulary size");
  gen->add_option("--seq-len", c.seq_len, "Tokens per sequence");
  gen->add_option("--tiers", c.tiers, "Duplication tiers as COUNTxMULT,...");
  gen->add_option("--n-train", c.n_train, "Training split size");
  gen->add_option("--n-test", c.n_test, "Test split size");
  gen->add_option("--split-seed", c.split_seed, "Split seed (defaults to --seed)");

  auto* tt = app.add_subcommand("train-target", "Train the target model on a corpus");
  add_config(tt);
  tt->add_option("--corpus", c.corpus, "Corpus JSON");
  tt->add_option("--out", c.out, "Output checkpoint");
  tt->add_option("--resume", c.resume, "Checkpoint to continue training from");
  tt->add_option("--embed-dim", c.model.embed_dim, "Embedding width");
  tt->add_option("--heads", c.model.num_heads, "Attention heads");
  tt->add_option("--layers", c.model.num_layers, "Transformer blocks");
  tt->add_option("--ffn-hidden", c.model.ffn_hidden_dim, "FFN hidden width");
  tt->add_option("--ffn-variant", c.ffn_variant, "plain (GELU) or gated (SiLU)");
  tt->add_option("--max-seq-len", c.model.max_seq_len, "Positional table size");
  tt->add_option("--epochs", c.target_train.max_epochs, "Maximum epoch count");
  tt->add_option("--batch-size", c.target_train.batch_size, "Sequences per step");
  tt->add_option("--lr", c.target_train.lr, "Adam learning rate");
  tt->add_option("--clip-norm", c.target_train.clip_norm, "Global gradient norm limit");
  tt->add_option("--stop-accuracy", c.target_train.stop_accuracy,
                 "Stop at this next-token accuracy on the most duplicated tier (<= 0 disables)");
  tt->add_option("--min-epochs", c.target_train.min_epochs,
                 "Epochs to run before the stop rule applies");
  tt->add_option("--offset-fraction", c.target_train.offset_fraction,
                 "Share of sequences preceded by filler");
  tt->add_option("--max-offset", c.target_train.max_offset, "Longest filler");
  tt->add_option("--filler", c.filler, "random tokens or packed (tail of the previous sequence)");
  tt->add_option("--seed", c.target_train.seed, "Initialisation and data-order seed");

  auto* tp = app.add_subcommand("train-prompt", "Train a constant or dynamic soft prompt");
  add_config(tp);
  tp->add_option("--method", c.method, "csp or dynamic");
  tp->add_option("--target", c.target, "Target checkpoint");
  tp->add_option("--corpus", c.corpus, "Corpus JSON");
  tp->add_option("--out", c.out, "Output checkpoint");
  tp->add_option("--audit", c.audit, "Write the consumed-id audit here");
  tp->add_option("--prompt-len", c.prompt_len, "Prompt length N");
  tp->add_option("--blocks", c.blocks, "Generator blocks K");
  tp->add_option("--epochs", c.prompt_train.epochs, "Epochs");
  tp->add_option("--batch-size", c.prompt_train.batch_size, "Sequences per step");
  tp->add_option("--lr", c.prompt_train.lr, "Adam learning rate");
  tp->add_option("--clip-norm", c.prompt_train.clip_norm, "Global gradient norm limit");
  tp->add_option("--prefix-len", c.prompt_train.prefix_len, "Prefix length L");
  tp->add_option("--csp-init", c.csp_init, "vocab or normal");
  tp->add_option("--init-std", c.init_std, "Std of random initial weights");
  tp->add_option("--seed", c.prompt_train.seed, "Initialisation and shuffling seed");

  auto* ev = app.add_subcommand("evaluate", "Score one extraction method on the test split");
  add_config(ev);
  ev->add_option("--method", c.method, "none, hard_const, hard_dyn, csp or dynamic");
  ev->add_option("--target", c.target, "Target checkpoint");
  ev->add_option("--corpus", c.corpus, "Corpus JSON");
  ev->add_option("--prompt", c.prompt, "Prompt checkpoint for csp or dynamic");
  ev->add_option("--out", c.out, "Report JSON");
  add_eval(ev);

  auto* cmp = app.add_subcommand("compare", "Score all five methods and write a comparison");
  add_config(cmp);
  cmp->add_option("--target", c.target, "Target checkpoint");
  cmp->add_option("--corpus", c.corpus, "Corpus JSON");
  cmp->add_option("--csp", c.csp, "Constant soft prompt checkpoint");
  cmp->add_option("--dynamic", c.dynamic, "Generator checkpoint");
  cmp->add_option("--out-csv", c.out_csv, "Comparison CSV");
  cmp->add_option("--out-json", c.out_json, "Comparison JSON");
  add_eval(cmp);

  auto* ver = app.add_subcommand("verify", "Run the built-in invariant checks");
  ver->add_option("--seed", c.seed, "Seed for the random test models");

  try {
    std::vector<std::string> args = raw_args;
    // Splice config-file values in right after the subcommand so that
    // explicit flags, which come later, win under TakeLast.
    const auto sub_it = std::find_if(args.begin(), args.end(),
                                     [](const std::string& a) { return !a.empty() && a[0] != '-'; });
    if (sub_it != args.end()) {
      auto* sub = app.get_subcommand_no_throw(*sub_it);
      std::string config_path;
      for (auto it = sub_it + 1; it != args.end(); ++it) {
        if (*it == "--config" && it + 1 != args.end()) config_path = *(it + 1);
        if (it->rfind("--config=", 0) == 0) config_path = it->substr(9);
      }
      if (sub != nullptr && !config_path.empty()) {
        const auto extra = config_args(config_path, *sub);
        args.insert(sub_it + 1, extra.begin(), extra.end());
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  try {
    tune_allocator();
    if (gen->parsed()) return cmd_gen_corpus(c, *gen, out);
    if (tt->parsed()) return cmd_train_target(c, *tt, out);
    if (tp->parsed()) return cmd_train_prompt(c, *tp, out);
    if (ev->parsed()) return cmd_evaluate(c, *ev, out);
    if (cmp->parsed()) return cmd_compare(c, *cmp, out);
    if (ver->parsed()) return cmd_verify(c, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitConfig;
}

}  // namespace memprobe
