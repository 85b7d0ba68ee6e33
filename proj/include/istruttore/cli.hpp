// Copyright 2026 The Istruttore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Command-line front end: translate, prompts, train-toy, generate, eval and
// report. `run` is the whole program minus process setup, so tests can call
// it in-process.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "istruttore/chat.hpp"
#include "istruttore/dataset.hpp"
#include "istruttore/decoding.hpp"
#include "istruttore/error.hpp"
#include "istruttore/harness.hpp"
#include "istruttore/judge.hpp"
#include "istruttore/metrics.hpp"
#include "istruttore/prompting.hpp"
#include "istruttore/toy_io.hpp"
#include "istruttore/toy_model.hpp"
#include "istruttore/translator.hpp"
#include "json.hpp"

namespace istruttore::cli {

inline constexpr const char* kDefaultEndpoint = "https://api.openai.com/v1/chat/completions";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << content;
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

inline std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

struct RemoteOptions {
  std::string endpoint = kDefaultEndpoint;
  std::string model = "gpt-3.5-turbo";
  int concurrency = 4;
  int max_retries = 5;
  long retry_base_ms = 1000;
};

inline std::shared_ptr<ChatTransport> make_remote(const RemoteOptions& o, const char* key_env) {
  auto http = std::make_shared<HttpChatTransport>(o.endpoint, env_or_empty(key_env), o.concurrency);
  RetryPolicy policy;
  policy.max_retries = o.max_retries;
  policy.base_delay = std::chrono::milliseconds(o.retry_base_ms);
  return std::make_shared<RetryingTransport>(http, policy);
}

inline void add_remote_flags(CLI::App* cmd, RemoteOptions& o, const std::string& prefix = "") {
  cmd->add_option("--" + prefix + "endpoint", o.endpoint, "chat-completion endpoint URL")->capture_default_str();
  cmd->add_option("--" + prefix + "model", o.model, "remote model name")->capture_default_str();
  cmd->add_option("--" + prefix + "concurrency", o.concurrency, "max in-flight requests")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--" + prefix + "max-retries", o.max_retries)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--" + prefix + "retry-base-ms", o.retry_base_ms)->check(CLI::NonNegativeNumber)->capture_default_str();
}

inline DatasetFormat parse_format(const std::string& s) {
  if (s == "alpaca") return DatasetFormat::kAlpacaJson;
  if (s == "squad-it") return DatasetFormat::kSquadIt;
  if (s == "newssum") return DatasetFormat::kNewsSum;
  if (s == "xformal") return DatasetFormat::kXformal;
  throw Error(ErrorKind::kConfiguration, "unknown dataset format '" + s + "'");
}

// ---------------------------------------------------------------------------

struct TranslateArgs {
  std::string in, out, cache, checkpoint;
  std::size_t checkpoint_every = 100;
  double temperature = 0.0;
  bool dry_run = false;
  RemoteOptions remote;
};

inline int cmd_translate(const TranslateArgs& a, std::ostream& out) {
  const auto manifest = parse_alpaca(read_file(a.in), a.in);
  TranslationCache cache(a.cache);
  if (a.dry_run) {
    out << "planned requests: " << plan_translation_requests(manifest, cache) << "\n";
    return 0;
  }
  JobOptions job;
  job.translation.model = a.remote.model;
  job.translation.temperature = a.temperature;
  job.checkpoint_path = a.checkpoint.empty() ? a.out + ".checkpoint.json" : a.checkpoint;
  job.checkpoint_every = a.checkpoint_every;
  job.concurrency = a.remote.concurrency;
  auto transport = make_remote(a.remote, "TRANSLATOR_API_KEY");
  const auto translated = run_translation_job(manifest, *transport, cache, job);
  write_file(a.out, serialize_dataset(translated));
  out << "translated " << translated.record_count() << " records -> " << a.out << "\n";
  return 0;
}

struct PromptsArgs {
  std::string in, out, mode = "training";
};

inline int cmd_prompts(const PromptsArgs& a, std::ostream& out) {
  const auto manifest = parse_alpaca(read_file(a.in), a.in);
  PromptMode mode;
  if (a.mode == "training") {
    mode = PromptMode::kTraining;
  } else if (a.mode == "inference") {
    mode = PromptMode::kInference;
  } else {
    throw Error(ErrorKind::kValidation, "--mode must be training or inference");
  }
  std::string lines;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto p = render_prompt(manifest.records[i], mode);
    nlohmann::ordered_json j{{"id", std::to_string(i)},
                             {"text", p.text},
                             {"has_input", p.has_input},
                             {"includes_output", p.includes_output}};
    lines += j.dump() + "\n";
  }
  write_file(a.out, lines);
  out << "rendered " << manifest.records.size() << " prompts -> " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string prompts, out, loss_csv;
  TrainingConfig train;
  LoraConfig lora;
  std::vector<std::string> targets{"q", "v"};
  ToyModelConfig model;
  std::uint64_t model_seed = 0;
};

inline int cmd_train(TrainArgs a, std::ostream& out) {
  std::vector<std::string> texts;
  const auto lines = detail::parse_lines(read_file(a.prompts));
  for (std::size_t i = 0; i < lines.size(); ++i) texts.push_back(detail::require_string(lines[i], "text", i));
  a.lora.targets.clear();
  for (const auto& t : a.targets) a.lora.targets.insert(parse_projection(t));

  const auto tokenizer = CharTokenizer::from_corpus(texts);
  a.model.vocab_size = tokenizer.vocab_size();
  a.model.seed = a.model_seed;
  const auto base = ToyModel::create(a.model);
  const auto result = train(base, tokenizer, texts, a.train, a.lora);

  write_file(a.out, save_adapter_checkpoint({a.lora, result.adapters, BaseModelSpec{a.model, tokenizer}}));
  write_file(a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv, loss_history_csv(result.step_losses));
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    out << "epoch " << (e + 1) << " loss " << result.epoch_losses[e] << "\n";
  }
  out << "adapters -> " << a.out << "\n";
  return 0;
}

struct GenerateArgs {
  std::string task, data, generator, out, system;
  DecodingConfig decoding;
  std::string mode = "sample";
  bool dry_run = false;
  RemoteOptions remote;
};

inline int cmd_generate(GenerateArgs a, std::ostream& out) {
  const auto& task = task_spec(a.task);
  const auto prompts = build_task_prompts(task, parse_dataset(read_file(a.data), task.format));
  a.decoding.mode = parse_decoding_mode(a.mode);
  a.decoding.validate();

  const auto colon = a.generator.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorKind::kConfiguration, "--generator must be replay:FILE, toy:ADAPTER or chat:MODEL");
  }
  const auto kind = a.generator.substr(0, colon);
  const auto arg = a.generator.substr(colon + 1);
  std::unique_ptr<Generator> gen;
  int concurrency = 1;
  if (kind == "replay") {
    gen = std::make_unique<ReplayGenerator>(ReplayGenerator::from_jsonl(read_file(arg)));
  } else if (kind == "toy") {
    const auto ckpt = load_adapter_checkpoint(read_file(arg));
    if (!ckpt.base_model) throw Error(ErrorKind::kValidation, "adapter file has no base_model section");
    const auto base = ToyModel::create(ckpt.base_model->config);
    gen = std::make_unique<ToyModelGenerator>(base, ckpt.adapters, ckpt.base_model->tokenizer, a.decoding);
  } else if (kind == "chat") {
    if (a.dry_run) {
      out << "planned requests: " << prompts.size() << "\n";
      return 0;
    }
    if (!arg.empty()) a.remote.model = arg;
    gen = std::make_unique<ChatGenerator>(make_remote(a.remote, "TRANSLATOR_API_KEY"), a.remote.model,
                                          a.decoding.temperature);
    concurrency = a.remote.concurrency;
  } else {
    throw Error(ErrorKind::kConfiguration, "unknown generator kind '" + kind + "'");
  }
  if (a.dry_run) {
    out << "planned requests: 0\n";
    return 0;
  }
  const std::string system = a.system.empty() ? kind : a.system;
  const auto records = run_generation(prompts, *gen, task.id, system, concurrency);
  write_file(a.out, to_jsonl(records));
  std::size_t flagged = 0;
  for (const auto& r : records) flagged += r.flags.empty() ? 0 : 1;
  out << "generated " << records.size() << " records (" << flagged << " flagged) -> " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string gen, task, out, baseline_file;
  bool judge = false;
  bool dry_run = false;
  std::size_t embed_dim = 64;
  RemoteOptions remote;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto& task = task_spec(a.task);
  const auto records = parse_generations(read_file(a.gen));
  const bool wants_judge =
      a.judge && std::find(task.metric_set.begin(), task.metric_set.end(), Metric::kEMGPT) != task.metric_set.end();
  if (a.dry_run) {
    out << "planned requests: " << (wants_judge ? records.size() : 0) << "\n";
    return 0;
  }
  HashingEmbedder embedder(a.embed_dim);
  ScoringOptions opts;
  opts.embedder = &embedder;
  if (!a.baseline_file.empty()) {
    const auto j = detail::parse_json(read_file(a.baseline_file));
    const auto& b = detail::require(j, "baseline", 0);
    if (!b.is_number() || !(b.get<double>() < 1.0)) {
      throw Error(ErrorKind::kValidation, "baseline must be a number below 1");
    }
    opts.bertscore_baseline = b.get<double>();
  }
  std::shared_ptr<ChatTransport> judge;
  if (wants_judge) {
    judge = std::make_shared<CachingTransport>(make_remote(a.remote, "JUDGE_API_KEY"));
    opts.judge = judge.get();
    opts.judge_options.model = a.remote.model;
  }
  std::vector<ScoreReport> scores;
  for (const auto& r : records) {
    if (!r.task.empty() && r.task != task.id) {
      throw Error(ErrorKind::kTask, "record " + r.id + " belongs to task " + r.task + ", not " + task.id);
    }
    scores.push_back(score_generation(r, task, opts));
  }
  write_file(a.out, to_jsonl(scores));
  out << "scored " << scores.size() << " records -> " << a.out << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> scores;
  std::string out, tsv;
};

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<ScoreReport> all;
  for (const auto& path : a.scores) {
    auto part = parse_scores(read_file(path));
    all.insert(all.end(), part.begin(), part.end());
  }
  const auto table = build_report(all);
  write_file(a.out, table.markdown);
  const auto tsv_path = a.tsv.empty() ? std::filesystem::path(a.out).replace_extension(".tsv").string() : a.tsv;
  write_file(tsv_path, table.tsv);
  out << table.markdown;
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"istruttore: Italian instruction-tuning pipeline", "istruttore"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML-style key-value config file mirroring the flags");

  TranslateArgs ta;
  auto* translate = app.add_subcommand("translate", "translate an Alpaca JSON dataset field by field");
  translate->add_option("--in", ta.in, "input Alpaca JSON")->required();
  translate->add_option("--out", ta.out, "output Alpaca JSON")->required();
  translate->add_option("--cache", ta.cache, "translation cache JSONL")->required();
  translate->add_option("--checkpoint", ta.checkpoint, "checkpoint JSON (default: OUT.checkpoint.json)");
  translate->add_option("--checkpoint-every", ta.checkpoint_every)->check(CLI::PositiveNumber)->capture_default_str();
  translate->add_option("--temperature", ta.temperature)->capture_default_str();
  translate->add_flag("--dry-run", ta.dry_run, "print the planned request count and exit");
  add_remote_flags(translate, ta.remote);

  PromptsArgs pa;
  auto* prompts = app.add_subcommand("prompts", "render Alpaca records into prompts");
  prompts->add_option("--in", pa.in)->required();
  prompts->add_option("--out", pa.out)->required();
  prompts->add_option("--mode", pa.mode)->check(CLI::IsMember({"training", "inference"}))->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train-toy", "train LoRA adapters on the toy model");
  train_cmd->add_option("--prompts", tr.prompts, "training prompts JSONL")->required();
  train_cmd->add_option("--out", tr.out, "adapter checkpoint JSON")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv, "loss history CSV (default: OUT.loss.csv)");
  train_cmd->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--epochs", tr.train.epochs)->capture_default_str();
  train_cmd->add_option("--micro-batch", tr.train.micro_batch)->capture_default_str();
  train_cmd->add_option("--virtual-batch", tr.train.virtual_batch)->capture_default_str();
  train_cmd->add_option("--warmup", tr.train.warmup_steps)->capture_default_str();
  train_cmd->add_option("--max-length", tr.train.max_length)->capture_default_str();
  train_cmd->add_option("--weight-decay", tr.train.weight_decay)->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed)->capture_default_str();
  train_cmd->add_option("--rank", tr.lora.rank)->capture_default_str();
  train_cmd->add_option("--alpha", tr.lora.alpha)->capture_default_str();
  train_cmd->add_option("--dropout", tr.lora.dropout)->capture_default_str();
  train_cmd->add_option("--targets", tr.targets)->delimiter(',')->capture_default_str();
  train_cmd->add_option("--d-model", tr.model.d_model)->capture_default_str();
  train_cmd->add_option("--layers", tr.model.n_layers)->capture_default_str();
  train_cmd->add_option("--d-ff", tr.model.d_ff)->capture_default_str();
  train_cmd->add_option("--model-max-len", tr.model.max_len)->capture_default_str();
  train_cmd->add_option("--model-seed", tr.model_seed)->capture_default_str();

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "run a generator over a task dataset");
  generate->add_option("--task", ga.task)->required();
  generate->add_option("--data", ga.data)->required();
  generate->add_option("--generator", ga.generator, "replay:FILE | toy:ADAPTER | chat:MODEL")->required();
  generate->add_option("--out", ga.out)->required();
  generate->add_option("--system", ga.system, "system name used in reports");
  generate->add_option("--temperature", ga.decoding.temperature)->capture_default_str();
  generate->add_option("--top-p", ga.decoding.top_p)->capture_default_str();
  generate->add_option("--top-k", ga.decoding.top_k)->capture_default_str();
  generate->add_option("--num-beams", ga.decoding.num_beams)->capture_default_str();
  generate->add_option("--max-new-tokens", ga.decoding.max_new_tokens)->capture_default_str();
  generate->add_option("--seed", ga.decoding.seed)->capture_default_str();
  generate->add_option("--mode", ga.mode)->check(CLI::IsMember({"sample", "beam"}))->capture_default_str();
  generate->add_flag("--dry-run", ga.dry_run);
  add_remote_flags(generate, ga.remote);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score generations");
  eval->add_option("--gen", ea.gen)->required();
  eval->add_option("--task", ea.task)->required();
  eval->add_option("--out", ea.out)->required();
  eval->add_option("--baseline", ea.baseline_file, "BERTScore baseline JSON {baseline}");
  eval->add_option("--embed-dim", ea.embed_dim)->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_flag("--judge", ea.judge, "enable EM-GPT via the judge endpoint");
  eval->add_flag("--dry-run", ea.dry_run);
  add_remote_flags(eval, ea.remote, "judge-");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "build report tables from score files");
  report->add_option("--scores", ra.scores, "score JSONL file(s)")->required();
  report->add_option("--out", ra.out, "Markdown output")->required();
  report->add_option("--tsv", ra.tsv, "TSV output (default: OUT with .tsv)");

  std::vector<const char*> argv{"istruttore"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*translate) return cmd_translate(ta, out);
    if (*prompts) return cmd_prompts(pa, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*generate) return cmd_generate(ga, out);
    if (*eval) return cmd_eval(ea, out);
    if (*report) return cmd_report(ra, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error [schema]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 1;
}

}  // namespace istruttore::cli
