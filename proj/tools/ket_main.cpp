#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ket/analysis.hpp"
#include "ket/checkpoint.hpp"
#include "ket/dataset.hpp"
#include "ket/kb.hpp"
#include "ket/manifest.hpp"
#include "ket/model.hpp"
#include "ket/synth.hpp"
#include "ket/tasks.hpp"
#include "ket/text.hpp"
#include "ket/train.hpp"
#include "ket/vocab.hpp"

namespace {

using namespace ket;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// A complete trained or initialized model as persisted in one checkpoint:
// encoder parameters, task head, vocabulary and configuration.
struct ModelBundle {
  ModelConfig cfg;
  Vocabulary vocab;
  bool is_knowledge = false;
  EncoderParams vanilla;
  KnowledgeEncoder knowledge;
  TaskHead head;

  TaskModel task_model(const CommonsenseKB* kb, int64_t window) {
    TaskModel m;
    if (is_knowledge) {
      m.knowledge = &knowledge;
    } else {
      m.vanilla = &vanilla;
    }
    m.vocab = &vocab;
    m.kb = kb;
    m.head = &head;
    m.window = window;
    return m;
  }

  NamedParams named_parameters() {
    TaskModel m = task_model(nullptr, 5);
    return m.named_parameters();
  }

  std::string config_json() const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(cfg.to_json());
    j["model_kind"] = is_knowledge ? "knowledge" : "vanilla";
    j["task"] = {{"kind", to_string(head.kind)}, {"num_classes", head.num_classes}};
    std::vector<std::string> tokens;
    for (int64_t i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(i));
    j["vocab"] = tokens;
    return j.dump();
  }

  void save(const std::string& path) {
    Checkpoint::from_params(config_json(), named_parameters()).save(path);
  }
};

Vocabulary vocab_from_tokens(const std::vector<std::string>& tokens) {
  const std::vector<std::string>& reserved = reserved_tokens();
  if (tokens.size() < reserved.size()) {
    throw std::runtime_error("checkpoint vocabulary is missing the reserved tokens");
  }
  for (size_t i = 0; i < reserved.size(); ++i) {
    if (tokens[i] != reserved[i]) {
      throw std::runtime_error("checkpoint vocabulary reserved slot " + std::to_string(i) +
                               " holds '" + tokens[i] + "'");
    }
  }
  Vocabulary v;
  for (size_t i = reserved.size(); i < tokens.size(); ++i) v.add(tokens[i]);
  return v;
}

ModelBundle load_bundle(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  nlohmann::json j = nlohmann::json::parse(ckpt.config_json);
  ModelBundle b;
  b.cfg = ModelConfig::from_json(j.at("model").dump());
  b.is_knowledge = j.at("model_kind").get<std::string>() == "knowledge";
  b.vocab = vocab_from_tokens(j.at("vocab").get<std::vector<std::string>>());
  const TaskKind kind = task_kind_from_string(j.at("task").at("kind").get<std::string>());
  b.head = TaskHead::init(kind, b.cfg, j.at("task").at("num_classes").get<int64_t>());
  Rng rng(b.cfg.seed);
  if (b.is_knowledge) {
    b.knowledge = KnowledgeEncoder::random_init(b.cfg);
  } else {
    b.vanilla = EncoderParams::init(b.cfg, rng);
  }
  ckpt.load_into(b.named_parameters());
  return b;
}

std::string dataset_text(const Example& ex) {
  if (ex.text_pair) return ex.text + " " + *ex.text_pair;
  return ex.text;
}

void emit(const std::string& content, const std::string& out_path, RunManifest& manifest) {
  if (out_path.empty()) {
    std::cout << content;
    std::cerr << manifest.to_json();
  } else {
    write_file(out_path, content);
    manifest.add_output(out_path);
    manifest.write_beside(out_path);
  }
}

// ---- commands --------------------------------------------------------------

int cmd_ingest(const std::string& kb_path, const std::string& templates_path,
               const std::string& out_path) {
  Stopwatch clock;
  const TemplateTable templates = TemplateTable::load(templates_path);
  const CommonsenseKB kb = CommonsenseKB::ingest_file(kb_path, templates);
  if (kb.size() == 0) std::cerr << "warning: knowledge base is empty\n";
  kb.save_index(out_path);

  RunManifest m;
  m.command = "ingest";
  m.config_json = nlohmann::json{{"entries", kb.size()}}.dump();
  m.add_input(kb_path);
  m.add_input(templates_path);
  m.add_output(out_path);
  m.wall_seconds = clock.seconds();
  m.write_beside(out_path);
  std::cerr << "ingested " << kb.size() << " entries\n";
  return 0;
}

int cmd_retrieve(const std::string& index_path, const std::string& text, int64_t window,
                 int64_t n_max, bool sample, uint64_t seed) {
  Stopwatch clock;
  const CommonsenseKB kb = CommonsenseKB::load_index(index_path);
  const CandidateSet cs =
      kb.retrieve(text, window, n_max,
                  sample ? Truncation::random_sample : Truncation::lowest_ids, seed);

  nlohmann::json out;
  out["text"] = text;
  out["window"] = window;
  out["n_max"] = n_max;
  nlohmann::json list = nlohmann::json::array();
  for (const CommonsenseEntry& e : cs.entries) {
    if (e.is_null()) {
      list.push_back({{"id", 0}, {"null", true}});
    } else {
      list.push_back({{"id", e.id},
                      {"head", e.head},
                      {"relation", e.relation},
                      {"tail", e.tail},
                      {"rendered", e.rendered}});
    }
  }
  out["candidates"] = list;
  std::cout << out.dump(2) << "\n";

  RunManifest m;
  m.command = "retrieve";
  m.config_json =
      nlohmann::json{{"text", text}, {"window", window}, {"n_max", n_max}, {"sample", sample}}
          .dump();
  m.seed = seed;
  m.add_input(index_path);
  m.wall_seconds = clock.seconds();
  std::cerr << m.to_json();
  return 0;
}

struct TrainArgs {
  std::string task = "classification";
  std::string data_path, eval_path, index_path, config_path, out_path, metrics_path;
  std::string pretrained_path;
  bool vanilla = false;
  int64_t num_classes = 2;
  int64_t window = 5;
  // model overrides
  int64_t layers = 0, hidden = 0, heads = 0, ffn = 0, max_len = 0, n_max = 0;
  double dropout = -1.0;
  // train overrides
  double lr = 0.0, weight_decay = -1.0, grad_clip = -2.0;
  int64_t batch_size = 0, epochs = -1;
  uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_train(const TrainArgs& a) {
  Stopwatch clock;

  ModelConfig cfg;
  TrainConfig tc;
  if (!a.config_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_file(a.config_path));
    if (j.contains("model")) cfg = ModelConfig::from_json(j["model"].dump());
    if (j.contains("train")) tc = TrainConfig::from_json(j["train"].dump());
  }
  if (a.layers > 0) cfg.layers = a.layers;
  if (a.hidden > 0) cfg.hidden = a.hidden;
  if (a.heads > 0) cfg.heads = a.heads;
  if (a.ffn > 0) cfg.ffn = a.ffn;
  if (a.max_len > 0) cfg.max_len = a.max_len;
  if (a.n_max > 0) cfg.n_max = a.n_max;
  if (a.dropout >= 0.0) cfg.dropout = a.dropout;
  if (a.lr > 0.0) tc.lr = a.lr;
  if (a.batch_size > 0) tc.batch_size = a.batch_size;
  if (a.epochs >= 0) tc.epochs = a.epochs;
  if (a.weight_decay >= 0.0) tc.weight_decay = a.weight_decay;
  if (a.grad_clip > -2.0) tc.grad_clip = a.grad_clip;
  if (a.seed_set) {
    tc.seed = a.seed;
    cfg.seed = a.seed;
  } else {
    cfg.seed = tc.seed;
  }

  const Dataset data = load_jsonl(a.data_path);
  Dataset eval_data;
  const bool have_eval = !a.eval_path.empty();
  if (have_eval) eval_data = load_jsonl(a.eval_path);

  CommonsenseKB kb;
  const bool have_kb = !a.index_path.empty();
  if (have_kb) kb = CommonsenseKB::load_index(a.index_path);

  ModelBundle bundle;
  const TaskKind kind = task_kind_from_string(a.task);
  if (!a.pretrained_path.empty()) {
    // The pretrained checkpoint fixes the architecture and vocabulary.
    const Checkpoint pre = Checkpoint::load(a.pretrained_path);
    nlohmann::json pj = nlohmann::json::parse(pre.config_json);
    bundle.cfg = ModelConfig::from_json(pj.at("model").dump());
    bundle.cfg.dropout = cfg.dropout;
    bundle.cfg.seed = cfg.seed;
    bundle.vocab = vocab_from_tokens(pj.at("vocab").get<std::vector<std::string>>());
    bundle.is_knowledge = !a.vanilla;
    if (bundle.is_knowledge) {
      bundle.knowledge = KnowledgeEncoder::adapt_from_pretrained(pre, cfg.seed);
      bundle.knowledge.cfg.dropout = cfg.dropout;
      bundle.knowledge.cfg.seed = cfg.seed;
      bundle.cfg = bundle.knowledge.cfg;
    } else {
      Rng rng(bundle.cfg.seed);
      bundle.vanilla = EncoderParams::init(bundle.cfg, rng);
      pre.load_into(bundle.vanilla.named_parameters("enc."), true);
    }
  } else {
    std::vector<std::string> texts;
    std::vector<const Dataset*> sources = {&data};
    if (have_eval) sources.push_back(&eval_data);
    for (const Dataset* ds : sources) {
      for (const Example& ex : ds->examples) {
        texts.push_back(ex.text);
        if (ex.text_pair) texts.push_back(*ex.text_pair);
        for (const std::string& c : ex.candidates) texts.push_back(c);
      }
    }
    if (have_kb) {
      for (const CommonsenseEntry& e : kb.entries()) texts.push_back(e.rendered);
    }
    bundle.vocab = Vocabulary::build(texts);
    cfg.vocab_size = bundle.vocab.size();
    bundle.cfg = cfg;
    bundle.is_knowledge = !a.vanilla;
    if (bundle.is_knowledge) {
      bundle.knowledge = KnowledgeEncoder::random_init(cfg);
    } else {
      Rng rng(cfg.seed);
      bundle.vanilla = EncoderParams::init(cfg, rng);
    }
  }
  bundle.head = TaskHead::init(kind, bundle.cfg, a.num_classes);

  TaskModel model = bundle.task_model(have_kb ? &kb : nullptr, a.window);
  const TrainResult result = train(model, data, have_eval ? &eval_data : nullptr, tc);
  for (const EpochMetrics& em : result.epochs) {
    std::cerr << "epoch " << em.epoch << ": train_loss " << em.train_loss << ", train_acc "
              << em.train_accuracy;
    if (em.eval_accuracy >= 0.0) std::cerr << ", eval_acc " << em.eval_accuracy;
    std::cerr << "\n";
  }

  bundle.save(a.out_path);
  const std::string metrics_path =
      a.metrics_path.empty() ? a.out_path + ".metrics.tsv" : a.metrics_path;
  write_file(metrics_path, metrics_tsv(result));

  RunManifest m;
  m.command = "train";
  nlohmann::json cj;
  cj["model"] = nlohmann::json::parse(bundle.cfg.to_json());
  cj["train"] = nlohmann::json::parse(tc.to_json());
  cj["task"] = {{"kind", a.task}, {"num_classes", a.num_classes}};
  cj["window"] = a.window;
  cj["vanilla"] = a.vanilla;
  m.config_json = cj.dump();
  m.seed = tc.seed;
  m.add_input(a.data_path);
  if (have_eval) m.add_input(a.eval_path);
  if (have_kb) m.add_input(a.index_path);
  if (!a.config_path.empty()) m.add_input(a.config_path);
  if (!a.pretrained_path.empty()) m.add_input(a.pretrained_path);
  m.add_output(a.out_path);
  m.add_output(metrics_path);
  m.wall_seconds = clock.seconds();
  m.write_beside(a.out_path);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& index_path, int64_t window, int64_t jobs,
             const std::string& out_path) {
  Stopwatch clock;
  ModelBundle bundle = load_bundle(model_path);
  CommonsenseKB kb;
  const bool have_kb = !index_path.empty();
  if (have_kb) kb = CommonsenseKB::load_index(index_path);
  const Dataset data = load_jsonl(data_path);

  TaskModel model = bundle.task_model(have_kb ? &kb : nullptr, window);
  const EvalStats stats = evaluate(model, data, jobs);

  std::string summary;
  {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(6);
    s << "examples\t" << stats.count << "\n";
    s << "accuracy\t" << stats.accuracy << "\n";
    s << "mean_loss\t" << stats.mean_loss << "\n";
    summary = s.str();
  }

  RunManifest m;
  m.command = "eval";
  m.config_json = nlohmann::json{{"window", window}, {"jobs", jobs}}.dump();
  m.add_input(model_path);
  m.add_input(data_path);
  if (have_kb) m.add_input(index_path);

  if (!out_path.empty()) {
    std::ostringstream s;
    s << "index\texpected\tpredicted\tcorrect\n";
    DescMemo memo;
    for (int64_t i = 0; i < data.size(); ++i) {
      const Example& ex = data.examples[static_cast<size_t>(i)];
      const TaskOutput out = task_forward(model, ex, nullptr, &memo);
      const int64_t expected = ex.label ? *ex.label : (ex.answer ? *ex.answer : -1);
      s << i << "\t" << expected << "\t" << out.prediction << "\t"
        << (out.prediction == expected ? 1 : 0) << "\n";
    }
    write_file(out_path, s.str());
    m.add_output(out_path);
  }

  std::cout << summary;
  m.wall_seconds = clock.seconds();
  if (out_path.empty()) {
    std::cerr << m.to_json();
  } else {
    m.write_beside(out_path);
  }
  return 0;
}

int cmd_drift(const std::string& before_path, const std::string& after_path,
              const std::string& pattern, const std::string& out_path) {
  Stopwatch clock;
  const Checkpoint before = Checkpoint::load(before_path);
  const Checkpoint after = Checkpoint::load(after_path);
  const DriftReport report = param_drift(before, after, pattern);

  RunManifest m;
  m.command = "drift";
  m.config_json = nlohmann::json{{"matrix", pattern}}.dump();
  m.add_input(before_path);
  m.add_input(after_path);
  m.wall_seconds = clock.seconds();
  emit(drift_tsv(report), out_path, m);
  return 0;
}

int cmd_influence(const std::string& model_path, const std::string& index_path,
                  const std::string& data_path, int64_t example, int64_t window,
                  const std::string& out_path) {
  Stopwatch clock;
  ModelBundle bundle = load_bundle(model_path);
  CommonsenseKB kb = CommonsenseKB::load_index(index_path);
  const Dataset data = load_jsonl(data_path);
  if (example < 0 || example >= data.size()) {
    throw std::runtime_error("example index " + std::to_string(example) + " outside dataset of " +
                             std::to_string(data.size()));
  }
  TaskModel model = bundle.task_model(&kb, window);
  const std::vector<InfluenceRecord> records =
      influence(model, data.examples[static_cast<size_t>(example)]);

  RunManifest m;
  m.command = "influence";
  m.config_json = nlohmann::json{{"example", example}, {"window", window}}.dump();
  m.add_input(model_path);
  m.add_input(index_path);
  m.add_input(data_path);
  m.wall_seconds = clock.seconds();
  emit(influence_tsv(records), out_path, m);
  return 0;
}

int cmd_stats(const std::string& index_path, const std::string& data_path,
              const std::string& out_path) {
  Stopwatch clock;
  const CommonsenseKB kb = CommonsenseKB::load_index(index_path);
  const Dataset data = load_jsonl(data_path);
  std::vector<std::string> texts;
  for (const Example& ex : data.examples) texts.push_back(dataset_text(ex));
  const KbStats stats = kb_stats(texts, kb);

  RunManifest m;
  m.command = "stats";
  m.config_json = "{}";
  m.add_input(index_path);
  m.add_input(data_path);
  m.wall_seconds = clock.seconds();
  emit(kb_stats_tsv(stats), out_path, m);
  return 0;
}

int cmd_synth(uint64_t seed, int64_t kb_size, int64_t train_n, int64_t test_n,
              const std::string& out_dir) {
  Stopwatch clock;
  const SynthData data = synth_generate(seed, kb_size, train_n, test_n);
  std::filesystem::create_directories(out_dir);
  const std::string kb_path = out_dir + "/kb.tsv";
  const std::string templates_path = out_dir + "/templates.tsv";
  const std::string train_path = out_dir + "/train.jsonl";
  const std::string test_path = out_dir + "/test.jsonl";
  write_file(kb_path, data.kb_tsv);
  write_file(templates_path, data.templates_tsv);
  save_jsonl(data.train, train_path);
  save_jsonl(data.test, test_path);

  RunManifest m;
  m.command = "synth";
  m.config_json =
      nlohmann::json{{"kb_size", kb_size}, {"train_n", train_n}, {"test_n", test_n}}.dump();
  m.seed = seed;
  m.add_output(kb_path);
  m.add_output(templates_path);
  m.add_output(train_path);
  m.add_output(test_path);
  m.wall_seconds = clock.seconds();
  m.write_beside(out_dir + "/synth");
  std::cerr << "wrote " << kb_size << " facts, " << train_n << " train and " << test_n
            << " test examples to " << out_dir << "\n";
  return 0;
}

int cmd_lowres(const std::string& train_path, const std::string& test_path,
               const std::string& index_path, int64_t k, uint64_t seed, int64_t window,
               int64_t n_max, bool any_overlap, const std::string& out_dir) {
  Stopwatch clock;
  const Dataset train_data = load_jsonl(train_path);
  const Dataset test_data = load_jsonl(test_path);
  const CommonsenseKB kb = CommonsenseKB::load_index(index_path);
  const LowResourceSplit split =
      low_resource_split(train_data, test_data, k, seed, kb, window, n_max,
                         any_overlap ? OverlapRule::any_overlap : OverlapRule::subset);
  std::filesystem::create_directories(out_dir);
  const std::string out_train = out_dir + "/train_k.jsonl";
  const std::string out_test = out_dir + "/test_filtered.jsonl";
  save_jsonl(split.train_k, out_train);
  save_jsonl(split.test_filtered, out_test);

  RunManifest m;
  m.command = "lowres";
  m.config_json = nlohmann::json{{"k", k},
                                 {"window", window},
                                 {"n_max", n_max},
                                 {"rule", any_overlap ? "any_overlap" : "subset"}}
                      .dump();
  m.seed = seed;
  m.add_input(train_path);
  m.add_input(test_path);
  m.add_input(index_path);
  m.add_output(out_train);
  m.add_output(out_test);
  m.wall_seconds = clock.seconds();
  m.write_beside(out_dir + "/lowres");
  std::cerr << "kept " << split.test_filtered.size() << " of " << test_data.size()
            << " test examples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-enhanced transformer workbench"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "build a knowledge index from a TSV file");
  std::string in_kb, in_templates, in_out;
  ingest->add_option("--kb", in_kb, "knowledge TSV: head<TAB>relation<TAB>tail[<TAB>variants]")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--templates", in_templates, "template TSV: relation<TAB>pattern")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--out", in_out, "index output path")->required();

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "retrieve candidates for a text");
  std::string r_index, r_text;
  int64_t r_window = 5, r_nmax = 64;
  bool r_sample = false;
  uint64_t r_seed = 0;
  retrieve->add_option("--index", r_index, "index file")->required()->check(CLI::ExistingFile);
  retrieve->add_option("--text", r_text, "input text")->required();
  retrieve->add_option("--window", r_window, "longest n-gram to match (1..5)");
  retrieve->add_option("--nmax", r_nmax, "candidate cap, null excluded");
  retrieve->add_flag("--sample", r_sample, "random-sample instead of keeping lowest ids");
  retrieve->add_option("--seed", r_seed, "sampling seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a JSONL dataset");
  TrainArgs ta;
  tr->add_option("--task", ta.task, "classification | multiple_choice | mlm_scoring");
  tr->add_option("--data", ta.data_path, "training JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--eval", ta.eval_path, "evaluation JSONL")->check(CLI::ExistingFile);
  tr->add_option("--index", ta.index_path, "knowledge index")->check(CLI::ExistingFile);
  tr->add_option("--config", ta.config_path, "JSON config with model/train sections")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out_path, "checkpoint output path")->required();
  tr->add_option("--metrics", ta.metrics_path, "metrics TSV path (default <out>.metrics.tsv)");
  tr->add_option("--from-pretrained", ta.pretrained_path,
                 "initialize from this checkpoint (adapts unless --vanilla)")
      ->check(CLI::ExistingFile);
  tr->add_flag("--vanilla", ta.vanilla, "train a plain encoder without knowledge");
  tr->add_option("--num-classes", ta.num_classes, "classification classes");
  tr->add_option("--window", ta.window, "retrieval window");
  tr->add_option("--layers", ta.layers);
  tr->add_option("--hidden", ta.hidden);
  tr->add_option("--heads", ta.heads);
  tr->add_option("--ffn", ta.ffn);
  tr->add_option("--max-len", ta.max_len);
  tr->add_option("--nmax", ta.n_max);
  tr->add_option("--dropout", ta.dropout);
  tr->add_option("--lr", ta.lr);
  tr->add_option("--batch", ta.batch_size);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--weight-decay", ta.weight_decay);
  tr->add_option("--grad-clip", ta.grad_clip);
  auto* seed_opt = tr->add_option("--seed", ta.seed, "model init and training seed");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
  std::string e_model, e_data, e_index, e_out;
  int64_t e_window = 5, e_jobs = 1;
  ev->add_option("--model", e_model, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", e_data, "JSONL dataset")->required()->check(CLI::ExistingFile);
  ev->add_option("--index", e_index, "knowledge index")->check(CLI::ExistingFile);
  ev->add_option("--window", e_window, "retrieval window");
  ev->add_option("--jobs", e_jobs, "worker threads");
  ev->add_option("--out", e_out, "per-example predictions TSV");

  // drift
  auto* dr = app.add_subcommand("drift", "per-layer L1 distance between two checkpoints");
  std::string d_before, d_after, d_pattern = "*ffn.w_in", d_out;
  dr->add_option("--before", d_before)->required()->check(CLI::ExistingFile);
  dr->add_option("--after", d_after)->required()->check(CLI::ExistingFile);
  dr->add_option("--matrix", d_pattern,
                 "parameter-name glob, e.g. 'text.*ffn.w_in' for one stack");
  dr->add_option("--out", d_out, "output TSV (default stdout)");

  // influence
  auto* infl = app.add_subcommand("influence", "leave-one-out candidate influence");
  std::string i_model, i_index, i_data, i_out;
  int64_t i_example = 0, i_window = 5;
  infl->add_option("--model", i_model)->required()->check(CLI::ExistingFile);
  infl->add_option("--index", i_index)->required()->check(CLI::ExistingFile);
  infl->add_option("--data", i_data)->required()->check(CLI::ExistingFile);
  infl->add_option("--example", i_example, "example index in the dataset");
  infl->add_option("--window", i_window, "retrieval window");
  infl->add_option("--out", i_out, "output TSV (default stdout)");

  // stats
  auto* st = app.add_subcommand("stats", "knowledge coverage statistics for a dataset");
  std::string s_index, s_data, s_out;
  st->add_option("--index", s_index)->required()->check(CLI::ExistingFile);
  st->add_option("--data", s_data)->required()->check(CLI::ExistingFile);
  st->add_option("--out", s_out, "output TSV (default stdout)");

  // synth
  auto* sy = app.add_subcommand("synth", "generate the synthetic knowledge task");
  uint64_t sy_seed = 0;
  int64_t sy_kb = 1280, sy_train = 1024, sy_test = 256;
  std::string sy_dir;
  sy->add_option("--seed", sy_seed);
  sy->add_option("--kb-size", sy_kb, "total facts (train pool + one per test example)");
  sy->add_option("--train-n", sy_train);
  sy->add_option("--test-n", sy_test);
  sy->add_option("--out-dir", sy_dir)->required();

  // lowres
  auto* lr = app.add_subcommand("lowres", "low-resource split with candidate coverage filter");
  std::string l_train, l_test, l_index, l_dir;
  int64_t l_k = 8, l_window = 5, l_nmax = 64;
  uint64_t l_seed = 0;
  bool l_any = false;
  lr->add_option("--data", l_train, "training JSONL")->required()->check(CLI::ExistingFile);
  lr->add_option("--test", l_test, "test JSONL")->required()->check(CLI::ExistingFile);
  lr->add_option("--index", l_index)->required()->check(CLI::ExistingFile);
  lr->add_option("--k", l_k, "training examples to keep");
  lr->add_option("--seed", l_seed);
  lr->add_option("--window", l_window);
  lr->add_option("--nmax", l_nmax);
  lr->add_flag("--any-overlap", l_any, "keep tests sharing any candidate (default: subset)");
  lr->add_option("--out-dir", l_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_ingest(in_kb, in_templates, in_out);
    if (retrieve->parsed()) return cmd_retrieve(r_index, r_text, r_window, r_nmax, r_sample, r_seed);
    if (tr->parsed()) {
      ta.seed_set = seed_opt->count() > 0;
      return cmd_train(ta);
    }
    if (ev->parsed()) return cmd_eval(e_model, e_data, e_index, e_window, e_jobs, e_out);
    if (dr->parsed()) return cmd_drift(d_before, d_after, d_pattern, d_out);
    if (infl->parsed()) return cmd_influence(i_model, i_index, i_data, i_example, i_window, i_out);
    if (st->parsed()) return cmd_stats(s_index, s_data, s_out);
    if (sy->parsed()) return cmd_synth(sy_seed, sy_kb, sy_train, sy_test, sy_dir);
    if (lr->parsed()) return cmd_lowres(l_train, l_test, l_index, l_k, l_seed, l_window, l_nmax,
                                        l_any, l_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
