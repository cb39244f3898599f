#include "mbridge/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mbridge/log.hpp"
#include "mbridge/ops.hpp"

namespace mbridge::eval {

using ordered_json = nlohmann::ordered_json;

std::string normalize_answer(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) {
      lowered.push_back(' ');
    } else {
      lowered.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  std::istringstream in(lowered);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  size_t start = 0;
  while (start < tokens.size() &&
         (tokens[start] == "a" || tokens[start] == "an" || tokens[start] == "the"))
    ++start;
  std::string out;
  for (size_t i = start; i < tokens.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += tokens[i];
  }
  return out;
}

double qa_accuracy(const std::vector<std::string>& responses,
                   const std::vector<std::vector<std::string>>& references) {
  if (responses.empty() || responses.size() != references.size())
    throw EvalError("qa_accuracy: empty or misaligned inputs");
  size_t hits = 0;
  for (size_t i = 0; i < responses.size(); ++i) {
    const std::string norm = normalize_answer(responses[i]);
    for (const std::string& ref : references[i]) {
      if (norm == normalize_answer(ref)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(responses.size());
}

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (unsigned char c : text) {
    if (std::ispunct(c)) {
      spaced.push_back(' ');
      spaced.push_back(static_cast<char>(c));
      spaced.push_back(' ');
    } else {
      spaced.push_back(static_cast<char>(c));
    }
  }
  std::istringstream in(spaced);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

namespace {

std::map<std::string, int64_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<std::string, int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += tokens[i + static_cast<size_t>(j)];
    }
    counts[key] += 1;
  }
  return counts;
}

}  // namespace

double bleu4(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw EvalError("bleu4: no references");
  const auto cand = metric_tokenize(candidate);
  if (cand.empty()) {
    logging::warn("bleu4: empty candidate scores 0");
    return 0.0;
  }
  std::vector<std::vector<std::string>> refs;
  for (const std::string& r : references) refs.push_back(metric_tokenize(r));

  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto cand_counts = ngram_counts(cand, n);
    int64_t total = 0, clipped = 0;
    for (const auto& [gram, count] : cand_counts) total += count;
    if (total == 0) return 0.0;  // candidate shorter than n
    for (const auto& [gram, count] : cand_counts) {
      int64_t best_ref = 0;
      for (const auto& ref : refs) {
        const auto ref_counts = ngram_counts(ref, n);
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) best_ref = std::max(best_ref, it->second);
      }
      clipped += std::min(count, best_ref);
    }
    if (clipped == 0) return 0.0;  // unsmoothed
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }

  // Brevity penalty against the closest reference length (ties -> shorter).
  const int64_t c = static_cast<int64_t>(cand.size());
  int64_t r = static_cast<int64_t>(refs[0].size());
  for (const auto& ref : refs) {
    const int64_t len = static_cast<int64_t>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r))
      r = len;
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / 4.0);
}

namespace {

/// Cosine with an exact-parallel guard: identical accumulation on both sides
/// must yield exactly 1 (the acceptance gate pins candidate==reference to a
/// score of 10.0 bitwise).
double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [k, va] : a) {
    na += va * va;
    auto it = b.find(k);
    if (it != b.end()) dot += va * it->second;
  }
  for (const auto& [k, vb] : b) nb += vb * vb;
  if (dot == 0.0 || na == 0.0 || nb == 0.0) return 0.0;
  if (dot * dot == na * nb) return 1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references_corpus) {
  if (candidates.empty() || candidates.size() != references_corpus.size())
    throw EvalError("cider: empty or misaligned corpus");
  for (const auto& refs : references_corpus)
    if (refs.empty()) throw EvalError("cider: candidate without references");

  const double n_docs = static_cast<double>(references_corpus.size());

  CiderResult result;
  for (int n = 1; n <= 4; ++n) {
    // Document frequency over reference sets: a document is one sample's set.
    std::map<std::string, double> df;
    std::vector<std::vector<std::map<std::string, int64_t>>> ref_counts(references_corpus.size());
    for (size_t i = 0; i < references_corpus.size(); ++i) {
      std::map<std::string, int64_t> seen;
      for (const std::string& ref : references_corpus[i]) {
        auto counts = ngram_counts(metric_tokenize(ref), n);
        for (const auto& [gram, cnt] : counts) seen[gram] = 1;
        ref_counts[i].push_back(std::move(counts));
      }
      for (const auto& [gram, one] : seen) df[gram] += 1.0;
    }
    auto idf = [&](const std::string& gram) {
      auto it = df.find(gram);
      const double d = it == df.end() ? 0.0 : it->second;
      return std::log(n_docs) - std::log(std::max(1.0, d));
    };

    for (size_t i = 0; i < candidates.size(); ++i) {
      std::map<std::string, double> cand_vec;
      for (const auto& [gram, cnt] : ngram_counts(metric_tokenize(candidates[i]), n))
        cand_vec[gram] = static_cast<double>(cnt) * idf(gram);
      double avg = 0.0;
      for (const auto& counts : ref_counts[i]) {
        std::map<std::string, double> ref_vec;
        for (const auto& [gram, cnt] : counts) ref_vec[gram] = static_cast<double>(cnt) * idf(gram);
        avg += cosine(cand_vec, ref_vec);
      }
      avg /= static_cast<double>(ref_counts[i].size());
      if (n == 1) result.per_candidate.push_back(avg);
      else result.per_candidate[i] += avg;
    }
  }
  for (double& score : result.per_candidate) {
    score = 10.0 * (score / 4.0);
    result.mean += score;
  }
  result.mean /= static_cast<double>(result.per_candidate.size());
  return result;
}

JudgeRubric JudgeRubric::builtin() {
  JudgeRubric rubric;
  rubric.system_prompt =
      "You are an impartial grader of assistant answers about media content. You are shown the "
      "question or context, reference information, and the assistant's response. Judge the "
      "response's helpfulness, relevance, accuracy and level of detail, and reply with a single "
      "integer score from 1 to 10 (10 best) followed by a one-sentence justification, e.g. "
      "'Score: 7. Accurate but thin on detail.'";
  return rubric;
}

std::optional<int> parse_judge_score(const std::string& reply) {
  for (size_t i = 0; i < reply.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
    size_t j = i;
    long value = 0;
    while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) {
      value = value * 10 + (reply[j] - '0');
      if (value > 1000) break;
      ++j;
    }
    if (value >= 1 && value <= 10) return static_cast<int>(value);
    i = j;
  }
  return std::nullopt;
}

JudgeReport judge_evaluate(const std::vector<EvalRecord>& records, ChatClient& judge,
                           const JudgeRubric& rubric) {
  if (records.empty()) throw EvalError("judge: no records");
  JudgeReport report;
  std::map<std::string, std::pair<double, int64_t>> per_category;
  double total = 0.0;
  int64_t parsed_count = 0;

  for (const EvalRecord& record : records) {
    if (record.category.empty()) throw EvalError("judge: record " + record.id + " has no category");
    std::ostringstream prompt;
    prompt << "[Question/context]\n" << record.context << "\n";
    prompt << "[Reference]\n";
    for (const std::string& ref : record.references) prompt << "- " << ref << "\n";
    prompt << "[Response]\n" << record.response << "\n";

    ChatRequest request;
    request.temperature = 0.0;
    request.messages.push_back({"system", rubric.system_prompt});
    request.messages.push_back({"user", prompt.str()});

    std::string reply;
    try {
      reply = judge.complete(request).content;
    } catch (const Error& e) {
      report.quarantined.emplace_back(record.id, std::string("client failure: ") + e.what());
      continue;
    }
    const auto score = parse_judge_score(reply);
    if (!score) {
      report.quarantined.emplace_back(record.id, reply);
      continue;
    }
    report.verdicts.push_back(JudgeVerdict{record.id, *score, reply});
    auto& [sum, count] = per_category[record.category];
    sum += *score;
    ++count;
    total += *score;
    ++parsed_count;
  }

  if (parsed_count == 0) throw EvalError("judge: every verdict was unparseable");
  for (const auto& [category, agg] : per_category)
    report.category_means[category] = agg.first / static_cast<double>(agg.second);
  report.overall = total / static_cast<double>(parsed_count);
  return report;
}

std::string judge_table_json(const std::vector<std::pair<std::string, JudgeReport>>& rows) {
  // Columns: union of categories in first-seen order, then Overall.
  std::vector<std::string> columns;
  for (const auto& [label, report] : rows)
    for (const auto& [category, mean] : report.category_means)
      if (std::find(columns.begin(), columns.end(), category) == columns.end())
        columns.push_back(category);

  ordered_json table;
  table["columns"] = columns;
  table["columns"].push_back("Overall");
  table["rows"] = ordered_json::array();
  for (const auto& [label, report] : rows) {
    ordered_json row{{"label", label}};
    for (const std::string& column : columns) {
      auto it = report.category_means.find(column);
      row[column] = it == report.category_means.end() ? ordered_json(nullptr)
                                                      : ordered_json(it->second);
    }
    row["Overall"] = report.overall;
    row["quarantined"] = report.quarantined.size();
    table["rows"].push_back(row);
  }
  return table.dump(2);
}

namespace {

EmbeddingSequence render_for_eval(ModelBundle& bundle, const InstructionSample& sample,
                                  const std::vector<Modality>* selected, const std::string& format,
                                  bool include_response) {
  auto outputs = bundle.perceive_sample(sample);
  RenderOptions options;
  options.selected = selected;
  options.include_response = include_response;
  SequenceBuilder builder = bundle.builder();
  if (format == "stage2") return builder.render_stage2(sample, outputs, options);
  if (!include_response) {
    InstructionSample prompt_only = sample;
    prompt_only.response.clear();
    auto seq = builder.render_alignment(prompt_only, outputs, options);
    return seq;
  }
  return builder.render_alignment(sample, outputs, options);
}

std::string selector_name(const std::vector<Modality>& kinds) {
  std::string name;
  for (Modality kind : kinds) {
    if (!name.empty()) name += "+";
    name += modality_name(kind);
  }
  return name;
}

}  // namespace

double token_accuracy(ModelBundle& bundle, const InstructionSample& sample,
                      const std::vector<Modality>* selected, const std::string& format) {
  autodiff::NoGradGuard no_grad;
  EmbeddingSequence seq = render_for_eval(bundle, sample, selected, format, true);
  Tensor logits = bundle.lm.forward(seq);
  const int64_t t_len = seq.length();
  const int64_t vocab = bundle.lm.vocab_size();
  int64_t correct = 0, total = 0;
  for (int64_t t = 0; t + 1 < t_len; ++t) {
    if (!seq.loss_mask[static_cast<size_t>(t + 1)]) continue;
    const int target = seq.positions[static_cast<size_t>(t + 1)].token_id;
    int best = 0;
    double best_value = logits.value_at(static_cast<size_t>(t * vocab));
    for (int v = 1; v < vocab; ++v) {
      const double value = logits.value_at(static_cast<size_t>(t * vocab + v));
      if (value > best_value) {
        best_value = value;
        best = v;
      }
    }
    correct += best == target ? 1 : 0;
    ++total;
  }
  if (total == 0) throw EvalError("token_accuracy: sample " + sample.id + " has no target span");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string generate_response(ModelBundle& bundle, const InstructionSample& sample,
                              const std::vector<Modality>* selected, const std::string& format,
                              int64_t max_new_tokens) {
  EmbeddingSequence prefix = render_for_eval(bundle, sample, selected, format, false);
  const auto ids = bundle.lm.generate(prefix, max_new_tokens, DecodeStrategy::greedy());
  return bundle.tokenizer.detokenize(ids);
}

std::vector<AblationRow> run_modality_ablation(ModelBundle& bundle,
                                               const std::vector<InstructionSample>& dataset,
                                               const AblationConfig& config) {
  if (dataset.empty()) throw EvalError("ablation: empty dataset");
  if (config.selectors.empty()) throw ConfigError("ablation: no selectors");
  for (const InstructionSample& sample : dataset) {
    if (sample.modalities.size() < 2)
      throw EvalError("ablation: sample " + sample.id + " carries fewer than 2 modalities");
    for (const auto& selector : config.selectors)
      for (Modality kind : selector) {
        const bool present = std::any_of(
            sample.modalities.begin(), sample.modalities.end(),
            [kind](const ModalityRef& r) { return r.kind == kind; });
        if (!present)
          throw ConfigError(std::string("ablation: selector needs ") + modality_name(kind) +
                            " but sample " + sample.id + " lacks it");
      }
  }

  const bool want_generation =
      std::any_of(config.metrics.begin(), config.metrics.end(), [](const std::string& m) {
        return m == "bleu4" || m == "cider" || m == "qa_accuracy";
      });

  std::vector<AblationRow> rows;
  for (const auto& selector : config.selectors) {
    AblationRow row;
    row.selector = selector;
    row.selector_name = selector_name(selector);
    row.n_samples = static_cast<int64_t>(dataset.size());

    double acc_sum = 0.0;
    std::vector<std::string> generations;
    std::vector<std::vector<std::string>> references;
    for (const InstructionSample& sample : dataset) {
      acc_sum += token_accuracy(bundle, sample, &selector, config.format);
      if (want_generation) {
        generations.push_back(
            generate_response(bundle, sample, &selector, config.format, config.max_new_tokens));
        references.push_back({sample.response});
      }
    }
    for (const std::string& metric : config.metrics) {
      if (metric == "token_accuracy") {
        row.metrics[metric] = acc_sum / static_cast<double>(dataset.size());
      } else if (metric == "bleu4") {
        double sum = 0.0;
        for (size_t i = 0; i < generations.size(); ++i) sum += bleu4(generations[i], references[i]);
        row.metrics[metric] = sum / static_cast<double>(generations.size());
      } else if (metric == "cider") {
        row.metrics[metric] = cider(generations, references).mean;
      } else if (metric == "qa_accuracy") {
        row.metrics[metric] = qa_accuracy(generations, references);
      } else {
        throw ConfigError("ablation: unknown metric " + metric);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string EvalReport::to_json_string() const {
  ordered_json j{{"run_id", run_id}};
  j["config"] = config_echo.empty() ? ordered_json(nullptr) : ordered_json::parse(config_echo);
  j["rows"] = ordered_json::array();
  for (const AblationRow& row : rows) {
    ordered_json r{{"selector", row.selector_name}, {"n_samples", row.n_samples}};
    for (const auto& [metric, value] : row.metrics) r[metric] = value;
    j["rows"].push_back(r);
  }
  j["quarantined_count"] = quarantined_count;
  return j.dump(2);
}

EvalReport make_eval_report(const std::string& config_echo, uint64_t seed,
                            std::vector<AblationRow> rows, int64_t quarantined) {
  EvalReport report;
  uint64_t h = 1469598103934665603ULL;
  auto mix_byte = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (unsigned char c : config_echo) mix_byte(c);
  for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>(seed >> (8 * i)));
  char hex[32];
  std::snprintf(hex, sizeof(hex), "run-%016llx", static_cast<unsigned long long>(h));
  report.run_id = hex;
  report.config_echo = config_echo;
  report.rows = std::move(rows);
  report.quarantined_count = quarantined;
  return report;
}

}  // namespace mbridge::eval
