#pragma once

// ROUGE-1/2/L, the domain-separability probe and representation export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dams/nn.hpp"
#include "dams/text.hpp"

namespace dams {

struct RougeScore {
  double precision = 0, recall = 0, f1 = 0;
  bool empty_reference = false;
};

inline double f_measure(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline RougeScore make_score(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  s.empty_reference = ref_total == 0;
  if (s.empty_reference || cand_total == 0) return s;
  s.precision = overlap / cand_total;
  s.recall = overlap / ref_total;
  s.f1 = f_measure(s.precision, s.recall);
  return s;
}

/// Clipped n-gram overlap.
inline RougeScore rouge_n(const std::vector<std::string>& cand, const std::vector<std::string>& ref, std::size_t n) {
  if (n == 0) fail(ErrorKind::usage, "rouge_n: n must be positive");
  auto grams = [n](const std::vector<std::string>& t) {
    std::map<std::vector<std::string>, std::size_t> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++m[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
    return m;
  };
  const auto c = grams(cand), r = grams(ref);
  std::size_t overlap = 0, ct = 0, rt = 0;
  for (const auto& [g, k] : c) {
    ct += k;
    auto it = r.find(g);
    if (it != r.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : r) rt += k;
  return make_score(double(overlap), double(ct), double(rt));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScore rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  return make_score(double(lcs_length(cand, ref)), double(cand.size()), double(ref.size()));
}

inline RougeScore rouge_n(const std::string& cand, const std::string& ref, std::size_t n) {
  return rouge_n(tokenize(cand), tokenize(ref), n);
}
inline RougeScore rouge_l(const std::string& cand, const std::string& ref) { return rouge_l(tokenize(cand), tokenize(ref)); }

struct RougeReport {
  RougeScore r1, r2, rl;
  std::size_t pairs = 0;
  std::size_t empty_references = 0;
};

inline RougeReport rouge_pair(const std::string& cand, const std::string& ref) {
  const auto c = tokenize(cand), r = tokenize(ref);
  RougeReport rep;
  rep.r1 = rouge_n(c, r, 1);
  rep.r2 = rouge_n(c, r, 2);
  rep.rl = rouge_l(c, r);
  rep.pairs = 1;
  rep.empty_references = r.empty();
  return rep;
}

/// Unweighted mean of per-pair precision, recall and F1.
inline RougeReport corpus_rouge(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) fail(ErrorKind::data, "corpus_rouge: no pairs");
  RougeReport sum;
  auto acc = [](RougeScore& s, const RougeScore& x) {
    s.precision += x.precision;
    s.recall += x.recall;
    s.f1 += x.f1;
  };
  for (const auto& [c, r] : pairs) {
    RougeReport p = rouge_pair(c, r);
    acc(sum.r1, p.r1);
    acc(sum.r2, p.r2);
    acc(sum.rl, p.rl);
    sum.empty_references += p.empty_references;
  }
  const double n = double(pairs.size());
  for (RougeScore* s : {&sum.r1, &sum.r2, &sum.rl}) {
    s->precision /= n;
    s->recall /= n;
    s->f1 /= n;
  }
  sum.pairs = pairs.size();
  return sum;
}

/// Tab-separated score table: metric, P, R, F1.
inline std::string score_table(const RougeReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "metric\tP\tR\tF1\n";
  os << "rouge-1\t" << r.r1.precision << '\t' << r.r1.recall << '\t' << r.r1.f1 << '\n';
  os << "rouge-2\t" << r.r2.precision << '\t' << r.r2.recall << '\t' << r.r2.f1 << '\n';
  os << "rouge-l\t" << r.rl.precision << '\t' << r.rl.recall << '\t' << r.rl.f1 << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Representations

using Vectors = std::vector<std::vector<double>>;

/// Dialogue-encoder [CLS] vectors of the given [CLS]-prefixed units.
inline Vectors encode_reps(const DamsModel& model, const std::vector<std::vector<int>>& units,
                           std::size_t batch_size = 64) {
  Vectors out;
  for (std::size_t b = 0; b < units.size(); b += batch_size) {
    Packed p;
    for (std::size_t i = b; i < std::min(units.size(), b + batch_size); ++i) p.push(units[i]);
    Tensor<real> cls = model.encode_cls(EncoderId::dialogue, p, Mode::eval());
    const std::size_t d = cls.cols();
    for (std::size_t r = 0; r < cls.rows(); ++r)
      out.emplace_back(cls.values().begin() + r * d, cls.values().begin() + (r + 1) * d);
  }
  return out;
}

inline std::string format_reps(const Vectors& vs, const std::string& tag) {
  std::string out;
  char buf[32];
  for (const auto& v : vs) {
    out += tag;
    for (double x : v) {
      std::snprintf(buf, sizeof buf, "\t%.17g", x);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// Appends (or writes) one line per vector: tag then d tab-separated values.
inline void export_reps(const Vectors& vs, const std::string& tag, const std::string& path, bool append = false) {
  if (tag.empty() || tag.find_first_of("\t\n") != std::string::npos)
    fail(ErrorKind::usage, "export_reps: tag must be non-empty without tabs or newlines");
  std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << format_reps(vs, tag);
  if (!out) fail(ErrorKind::io, "failed writing " + path);
}

/// Representation file grouped by tag, in file order.
inline std::map<std::string, Vectors> read_reps(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::map<std::string, Vectors> out;
  std::string line;
  std::size_t lineno = 0, dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag, field;
    std::getline(is, tag, '\t');
    std::vector<double> v;
    while (std::getline(is, field, '\t')) {
      char* end = nullptr;
      const double x = std::strtod(field.c_str(), &end);
      if (field.empty() || *end != '\0' || !std::isfinite(x))
        fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": bad value '" + field + "'");
      v.push_back(x);
    }
    if (v.empty()) fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": no values");
    if (dim == 0) dim = v.size();
    if (v.size() != dim)
      fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) + " values");
    out[tag].push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe

struct ProbeReport {
  double accuracy = 0;
  double train_accuracy = 0;
  std::size_t count_a = 0, count_b = 0;  // per-domain vectors used after balancing
  std::size_t test_size = 0;
  std::string tag;
};

struct ProbeConfig {
  std::size_t epochs = 200;
  double test_fraction = 0.2;
};

/// Logistic-regression probe on frozen vectors: balance the domains, split
/// 80/20 per domain, centre and scale by the training set, then full-batch
/// gradient descent from zero with a step bounded by the loss curvature.
/// Centring plus one scalar scale keep the probe rotation-equivariant.
inline ProbeReport domain_probe(const Vectors& a, const Vectors& b, std::uint64_t seed, const ProbeConfig& cfg = {},
                                const std::string& tag = "") {
  if (a.size() < 40 || b.size() < 40) fail(ErrorKind::data, "probe: need at least 40 vectors per domain");
  const std::size_t d = a[0].size();
  for (const auto* set : {&a, &b})
    for (const auto& v : *set)
      if (v.size() != d) fail(ErrorKind::data, "probe: inconsistent vector dimensions");

  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x9b0eu};
  std::mt19937_64 rng(seq);
  const std::size_t m = std::min(a.size(), b.size());
  auto take = [&](const Vectors& src) {
    std::vector<std::size_t> idx(src.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    idx.resize(m);
    return idx;
  };
  const auto ia = take(a), ib = take(b);
  const std::size_t n_test = std::max<std::size_t>(1, std::size_t(std::llround(double(m) * cfg.test_fraction)));
  const std::size_t n_train = m - n_test;

  std::vector<const std::vector<double>*> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (std::size_t k = 0; k < m; ++k) {
    const bool test = k >= n_train;
    (test ? test_x : train_x).push_back(&a[ia[k]]);
    (test ? test_y : train_y).push_back(0);
    (test ? test_x : train_x).push_back(&b[ib[k]]);
    (test ? test_y : train_y).push_back(1);
  }

  std::vector<double> mean(d, 0.0);
  for (const auto* x : train_x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += (*x)[j];
  for (auto& v : mean) v /= double(train_x.size());
  double ms = 0;
  for (const auto* x : train_x)
    for (std::size_t j = 0; j < d; ++j) ms += ((*x)[j] - mean[j]) * ((*x)[j] - mean[j]);
  ms /= double(train_x.size());
  const double inv_scale = ms > 0 ? 1.0 / std::sqrt(ms) : 1.0;
  auto prep = [&](const std::vector<const std::vector<double>*>& xs) {
    Vectors out;
    for (const auto* x : xs) {
      std::vector<double> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = ((*x)[j] - mean[j]) * inv_scale;
      out.push_back(std::move(v));
    }
    return out;
  };
  const Vectors xtr = prep(train_x), xte = prep(test_x);

  // After scaling the mean squared norm is 1, so the logistic loss gradient is
  // Lipschitz with constant at most 0.25·(1 + 1) including the bias.
  const double lr = 1.0 / 0.5;
  std::vector<double> w(d, 0.0);
  double bias = 0;
  const double n = double(xtr.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<double> gw(d, 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      double z = bias;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * xtr[i][j];
      const double r = 1.0 / (1.0 + std::exp(-z)) - double(train_y[i]);
      for (std::size_t j = 0; j < d; ++j) gw[j] += r * xtr[i][j];
      gb += r;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= lr * gw[j] / n;
    bias -= lr * gb / n;
  }
  auto accuracy = [&](const Vectors& xs, const std::vector<int>& ys) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double z = bias;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * xs[i][j];
      ok += (z > 0 ? 1 : 0) == ys[i];
    }
    return double(ok) / double(xs.size());
  };
  ProbeReport rep;
  rep.accuracy = accuracy(xte, test_y);
  rep.train_accuracy = accuracy(xtr, train_y);
  rep.count_a = rep.count_b = m;
  rep.test_size = xte.size();
  rep.tag = tag;
  return rep;
}

}  // namespace dams
