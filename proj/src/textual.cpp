#include "lite/textual.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lite/errors.hpp"
#include "lite/util.hpp"

namespace lite {

namespace {

const char* const kSpecials[] = {"[PAD]", "[MASK]", "[SEP]", "[CLS]"};

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '<'; }
bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '|' ||
         c == '<' || c == '>' || c == '\'';
}
bool is_single_digit(const std::string& t) { return t.size() == 1 && is_digit(t[0]); }
bool attaches_left(const std::string& t) {
  return t == "," || t == "." || t == ":" || t == ";" || t == ")" || t == "!" || t == "?";
}

}  // namespace

std::string render_value(double value) { return format_significant(value, 5, true); }

Linearization linearize(const Record& record, const FeatureSchema& schema) {
  Linearization lin;
  for (std::size_t k = 0; k < schema.size(); ++k)
    lin.pairs.emplace_back(schema.names[k],
                           record.feature_present[k] ? render_value(record.features[k]) : kMaskToken);
  return lin;
}

namespace {

std::string header(const std::string& region, std::int64_t day) {
  return "On day " + std::to_string(day) + " in region " + region;
}

}  // namespace

std::string render_semantic(const Linearization& lin, const std::string& region, std::int64_t day) {
  std::string out = header(region, day);
  if (lin.pairs.empty()) return out + ".";
  out += ",";
  for (const auto& [key, value] : lin.pairs) out += " the " + key + " was " + value + ".";
  return out;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '[') {
      bool matched = false;
      for (const char* special : kSpecials) {
        const std::string s(special);
        if (text.compare(i, s.size(), s) == 0) {
          tokens.push_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (c == '-' && i + 1 < n && is_digit(text[i + 1])) {
      tokens.emplace_back("-");
      ++i;
      continue;
    }
    if (is_digit(c) || c == '.') {
      tokens.emplace_back(1, c);
      ++i;
      continue;
    }
    if (is_word_start(c)) {
      std::size_t j = i + 1;
      while (j < n && is_word_char(text[j])) ++j;
      tokens.push_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    // Any other character (including a whole UTF-8 sequence) is its own token.
    std::size_t len = 1;
    const auto uc = static_cast<unsigned char>(c);
    if (uc >= 0xF0) len = 4;
    else if (uc >= 0xE0) len = 3;
    else if (uc >= 0xC0) len = 2;
    tokens.push_back(text.substr(i, std::min(len, n - i)));
    i += len;
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) add(s);
  for (char d = '0'; d <= '9'; ++d) add(std::string(1, d));
  for (const char* p : {".", "-", ",", ":", ";"}) add(p);
}

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

void Vocabulary::learn(const std::string& text) {
  for (const auto& t : split_tokens(text)) add(t);
}

std::int32_t Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw DataError("unknown token '" + token + "'");
  return it->second;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + "\t" + std::to_string(i) + "\n";
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError("vocabulary line " + std::to_string(line_no) + ": missing tab");
    const std::string token = line.substr(0, tab);
    const long id = std::stol(line.substr(tab + 1));
    if (id != static_cast<long>(vocab.tokens_.size()))
      throw ParseError("vocabulary line " + std::to_string(line_no) + ": ids must be dense and ordered");
    vocab.add(token);
  }
  for (std::size_t i = 0; i < 4; ++i)
    if (vocab.tokens_.size() <= i || vocab.tokens_[i] != kSpecials[i])
      throw ParseError("vocabulary does not start with the reserved special tokens");
  return vocab;
}

TokenSeq tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  TokenSeq seq;
  for (const auto& t : split_tokens(text)) {
    const auto id = vocab.id(t);
    if (id == kMaskId) seq.mask_positions.push_back(seq.ids.size());
    seq.ids.push_back(id);
  }
  if (seq.ids.size() > max_len) {
    if (!seq.mask_positions.empty() && seq.mask_positions.back() >= max_len)
      throw DataError("truncating to " + std::to_string(max_len) + " tokens would drop a [MASK]");
    seq.ids.resize(max_len);
  }
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const std::string& t = vocab.token(seq.ids[i]);
    bool space = i > 0;
    if (i > 0) {
      const std::string& prev = vocab.token(seq.ids[i - 1]);
      if (attaches_left(t)) space = false;
      if (is_single_digit(t)) {
        if (is_single_digit(prev) || prev == "-") space = false;
        if (prev == "." && i >= 2 && is_single_digit(vocab.token(seq.ids[i - 2]))) space = false;
      }
      if (prev == "(") space = false;
    }
    if (space) out.push_back(' ');
    out += t;
  }
  return out;
}

SemanticTokens tokenize_record(const Record& record, const FeatureSchema& schema,
                               const Vocabulary& vocab, std::size_t max_len) {
  const auto lin = linearize(record, schema);
  SemanticTokens out;
  auto append = [&](const std::string& piece) {
    const std::size_t before = out.seq.ids.size();
    for (const auto& t : split_tokens(piece)) {
      const auto id = vocab.id(t);
      if (id == kMaskId) out.seq.mask_positions.push_back(out.seq.ids.size());
      out.seq.ids.push_back(id);
    }
    return std::pair{before, out.seq.ids.size() - before};
  };
  append(header(record.region_id, record.day_index));
  out.value_spans.assign(schema.size(), {0, 0});
  if (lin.pairs.empty()) {
    append(".");
  } else {
    append(",");
    for (std::size_t k = 0; k < lin.pairs.size(); ++k) {
      append("the " + lin.pairs[k].first + " was");
      const auto span = append(lin.pairs[k].second);
      if (record.feature_present[k]) out.value_spans[k] = span;
      else out.mask_features.push_back(k);
      append(".");
    }
  }
  if (out.seq.ids.size() > max_len)
    throw DataError("semantic text of " + record.region_id + " day " + std::to_string(record.day_index) +
                    " needs " + std::to_string(out.seq.ids.size()) + " tokens, limit is " +
                    std::to_string(max_len));
  return out;
}

DomainDescription DomainDescription::preset(const std::string& name) {
  const std::string task_tail = " given the observed meteorological features represented in the image and text spaces;";
  if (name == "CRW-Flow")
    return {"The Christina River Watershed Flow (CRW-Flow) is a dataset containing streamflow observations "
            "from 16 river segments. It is worth noting that the streamflow becomes hundreds of times "
            "higher than usual when it rains.",
            "predict the streamflow" + task_tail};
  if (name == "CRW-Temp")
    return {"The Christina River Watershed Temperature (CRW-Temp) is a dataset containing stream water "
            "temperature observations from 42 river segments.",
            "predict the stream water temperature" + task_tail};
  if (name == "AGR")
    return {"The Agriculture nitrous oxide (AGR) is a dataset containing agricultural nitrous oxide "
            "emission observations from 6 chambers.",
            "predict the nitrous oxide emission" + task_tail};
  if (name == "SYN-Temp")
    return {"The Synthetic Stream Temperature (SYN-Temp) is a dataset containing water temperature "
            "observations from simulated river segments with seasonal weather drivers.",
            "predict the water temperature" + task_tail};
  throw ConfigError("unknown domain preset '" + name + "'");
}

std::string trend_label(std::span<const TargetObservation> window) {
  if (window.empty()) return "unknown";
  const double n = static_cast<double>(window.size());
  double mx = 0.0, my = 0.0;
  for (const auto& o : window) {
    mx += static_cast<double>(o.day);
    my += o.value;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& o : window) {
    const double dx = static_cast<double>(o.day) - mx;
    sxy += dx * (o.value - my);
    sxx += dx * dx;
    syy += (o.value - my) * (o.value - my);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  const double sd = std::sqrt(syy / n);
  if (slope > 0.01 * sd && slope > 0.0) return "increasing";
  if (slope < -0.01 * sd && slope < 0.0) return "decreasing";
  return "stable";
}

std::string build_domain_instruction(const DomainDescription& domain,
                                     std::span<const TargetObservation> target_window) {
  std::string min_s = "unknown", max_s = "unknown", median_s = "unknown";
  if (!target_window.empty()) {
    std::vector<double> values;
    for (const auto& o : target_window) values.push_back(o.value);
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    min_s = format_significant(values.front(), 5, false);
    max_s = format_significant(values.back(), 5, false);
    median_s = format_significant(median, 5, false);
  }
  return "<|start_prompt|> Dataset description: " + domain.dataset + " Task description: " + domain.task +
         " Target statistics: min value " + min_s + ", max value " + max_s + ", median value " + median_s +
         ", the trend of input is " + trend_label(target_window) + " <|end_prompt|>";
}

Vocabulary build_vocabulary(const FeatureSchema& schema, const std::vector<std::string>& regions,
                            const DomainDescription& domain) {
  Vocabulary vocab;
  vocab.learn("On day in region the was");
  for (const auto& name : schema.names) vocab.learn(name);
  for (const auto& r : regions) vocab.learn(r);
  const TargetObservation probe[] = {{0, 1.0}, {1, 2.0}};
  vocab.learn(build_domain_instruction(domain, probe));
  vocab.learn(build_domain_instruction(domain, {}));
  vocab.learn("increasing decreasing stable unknown");
  return vocab;
}

}  // namespace lite
