#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mbridge/llm_client.hpp"
#include "mbridge/training.hpp"

namespace mbridge::eval {

/// One scored model output with its references and (for chat scoring) a
/// category in the three-way layout: Reasoning, Understanding/Description,
/// Knowledge/Conversation.
struct EvalRecord {
  std::string id;
  std::string task;
  std::string category;
  std::vector<Modality> modalities_used;
  std::string response;
  std::vector<std::string> references;
  std::string context;  // question / reference description shown to the judge
};

/// Lowercase, punctuation stripped, whitespace collapsed, leading articles
/// (a/an/the) dropped. This rule changes absolute QA numbers and is pinned
/// here; see README.
std::string normalize_answer(const std::string& text);

/// Exact match of the normalized response against any normalized reference.
double qa_accuracy(const std::vector<std::string>& responses,
                   const std::vector<std::vector<std::string>>& references);

/// Punctuation split off as separate tokens, then whitespace tokenization.
std::vector<std::string> metric_tokenize(const std::string& text);

/// Unsmoothed BLEU-4: geometric mean of modified 1..4-gram precisions times
/// the brevity penalty; zero when any precision is zero.
double bleu4(const std::string& candidate, const std::vector<std::string>& references);

struct CiderResult {
  double mean = 0.0;
  std::vector<double> per_candidate;
};

/// Base CIDEr on the 0-10 scale: per n in 1..4, cosine between TF-IDF n-gram
/// vectors of candidate and each reference (IDF from the reference corpus),
/// averaged over references, then 10 * mean over n; corpus score is the mean
/// over candidates.
CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references_corpus);

struct JudgeVerdict {
  std::string sample_id;
  int score = 0;  // 1..10
  std::string rationale;
};

struct JudgeRubric {
  std::string system_prompt;
  static JudgeRubric builtin();
};

/// First integer in [1,10] found in the reply (maximal digit runs).
std::optional<int> parse_judge_score(const std::string& reply);

struct JudgeReport {
  std::vector<JudgeVerdict> verdicts;
  std::map<std::string, double> category_means;
  /// Mean of all per-sample scores (not the mean of category means).
  double overall = 0.0;
  std::vector<std::pair<std::string, std::string>> quarantined;  // id, raw reply
};

JudgeReport judge_evaluate(const std::vector<EvalRecord>& records, ChatClient& judge,
                           const JudgeRubric& rubric);

/// Table layout for chat scoring: one row per method/modality label, one
/// column per category plus Overall.
std::string judge_table_json(const std::vector<std::pair<std::string, JudgeReport>>& rows);

struct AblationConfig {
  std::vector<std::vector<Modality>> selectors;
  std::vector<std::string> metrics = {"token_accuracy"};  // + bleu4, cider, qa_accuracy
  int64_t max_new_tokens = 48;
  /// "alignment" renders soft blocks + text; "stage2" uses the dialogue format.
  std::string format = "alignment";
};

struct AblationRow {
  std::string selector_name;
  std::vector<Modality> selector;
  std::map<std::string, double> metrics;
  int64_t n_samples = 0;
};

/// Teacher-forced next-token accuracy over the masked response span, with
/// only the selected modalities' soft prompts rendered.
double token_accuracy(ModelBundle& bundle, const InstructionSample& sample,
                      const std::vector<Modality>* selected, const std::string& format);

/// Greedy response text for a sample under a modality selector.
std::string generate_response(ModelBundle& bundle, const InstructionSample& sample,
                              const std::vector<Modality>* selected, const std::string& format,
                              int64_t max_new_tokens);

/// One row per selector: renders inputs with only the selected modalities'
/// soft prompts (omitted entirely, not zeroed), generates/evaluates, and
/// computes the configured metrics.
std::vector<AblationRow> run_modality_ablation(ModelBundle& bundle,
                                               const std::vector<InstructionSample>& dataset,
                                               const AblationConfig& config);

struct EvalReport {
  std::string run_id;  // fingerprint of config echo + seed; never a timestamp
  std::string config_echo;
  std::vector<AblationRow> rows;
  int64_t quarantined_count = 0;
  std::string to_json_string() const;
};

EvalReport make_eval_report(const std::string& config_echo, uint64_t seed,
                            std::vector<AblationRow> rows, int64_t quarantined);

}  // namespace mbridge::eval
