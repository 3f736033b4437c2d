#include "segprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace segprompt::metrics {

namespace {

std::int64_t overlap(const BinaryMask& a, const BinaryMask& b) {
  return ((a.pixels() != 0) && (b.pixels() != 0)).cast<std::int64_t>().sum();
}

void check_extents(const BinaryMask& a, const BinaryMask& b, const char* what) {
  nn::require(a.same_extents(b), std::string(what) + ": extents " + std::to_string(a.height()) + "x" +
                                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                     std::to_string(b.width()));
}

using NGramCounts = std::map<std::vector<std::string>, int>;

NGramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NGramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return out;
}

struct BleuStats {
  std::vector<double> matched;
  std::vector<double> total;
  double cand_len = 0;
  double ref_len = 0;
};

void accumulate_bleu(BleuStats& s, const std::vector<std::string>& cand, const std::vector<std::string>& ref, int n) {
  for (int k = 1; k <= n; ++k) {
    const auto c = ngrams(cand, static_cast<std::size_t>(k));
    const auto r = ngrams(ref, static_cast<std::size_t>(k));
    for (const auto& [gram, count] : c) {
      s.total[static_cast<std::size_t>(k - 1)] += count;
      auto it = r.find(gram);
      if (it != r.end()) s.matched[static_cast<std::size_t>(k - 1)] += std::min(count, it->second);
    }
  }
  s.cand_len += static_cast<double>(cand.size());
  s.ref_len += static_cast<double>(ref.size());
}

double finish_bleu(const BleuStats& s, int n) {
  if (s.cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (s.total[i] == 0 || s.matched[i] == 0) return 0.0;
    log_sum += std::log(s.matched[i] / s.total[i]);
  }
  const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return 100.0 * bp * std::exp(log_sum / n);
}

}  // namespace

std::optional<double> dice(const BinaryMask& pred, const BinaryMask& gt) {
  check_extents(pred, gt, "dice");
  const auto p = pred.count();
  const auto g = gt.count();
  if (p + g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(overlap(pred, gt)) / static_cast<double>(p + g);
}

BinaryMask skeletonize(const BinaryMask& m) {
  const int h = m.height();
  const int w = m.width();
  BinaryMask img = m;
  auto at = [&](int r, int c) -> int { return r >= 0 && c >= 0 && r < h && c < w && img.at(r, c) ? 1 : 0; };

  std::vector<std::pair<int, int>> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          if (!img.at(r, c)) continue;
          // P2..P9 clockwise from north.
          const int p[8] = {at(r - 1, c), at(r - 1, c + 1), at(r, c + 1), at(r + 1, c + 1),
                            at(r + 1, c), at(r + 1, c - 1), at(r, c - 1), at(r - 1, c - 1)};
          int b = 0;
          int a = 0;
          for (int i = 0; i < 8; ++i) {
            b += p[i];
            if (p[i] == 0 && p[(i + 1) % 8] == 1) ++a;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const int p2 = p[0], p4 = p[2], p6 = p[4], p8 = p[6];
          const bool ok = pass == 0 ? (p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0) : (p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0);
          if (ok) doomed.emplace_back(r, c);
        }
      for (const auto& [r, c] : doomed) img.set(r, c, false);
      if (!doomed.empty()) changed = true;
    }
  }

  // Thinning erases 2×2 blocks entirely; keep one pixel of any component that vanished.
  for (const auto& comp : masks::connected_components(m)) {
    if (overlap(comp, img) > 0) continue;
    const auto [cr, cc] = masks::centroid(comp);
    int best_r = -1, best_c = -1;
    double best = 0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (!comp.at(r, c)) continue;
        const double d = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        if (best_r < 0 || d < best) {
          best = d;
          best_r = r;
          best_c = c;
        }
      }
    img.set(best_r, best_c);
  }
  return img;
}

std::optional<double> cl_dice(const BinaryMask& pred, const BinaryMask& gt) {
  check_extents(pred, gt, "cl_dice");
  const BinaryMask sp = skeletonize(pred);
  const BinaryMask sg = skeletonize(gt);
  const auto np = sp.count();
  const auto ng = sg.count();
  if (np == 0 || ng == 0) return std::nullopt;
  const double tprec = static_cast<double>(overlap(sp, gt)) / static_cast<double>(np);
  const double tsens = static_cast<double>(overlap(sg, pred)) / static_cast<double>(ng);
  if (tprec + tsens == 0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

std::string_view finding_name(Finding f) {
  switch (f) {
    case Finding::LungOpacity: return "Lung Opacity";
    case Finding::Cardiomegaly: return "Cardiomegaly";
    case Finding::Pneumothorax: return "Pneumothorax";
    case Finding::SupportDevices: return "Support Devices";
    case Finding::PleuralEffusion: return "Pleural Effusion";
  }
  return "?";
}

F1Result macro_micro_f1(const std::vector<LabelVector>& preds, const std::vector<LabelVector>& gts) {
  nn::require(preds.size() == gts.size(), "macro_micro_f1: prediction and reference counts differ");
  nn::require(!preds.empty(), "macro_micro_f1: no samples");
  const auto& findings = gts.front().findings;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nn::require(preds[i].findings == findings && gts[i].findings == findings,
                "macro_micro_f1: finding lists differ at sample " + std::to_string(i));
    nn::require(preds[i].values.size() == findings.size() && gts[i].values.size() == findings.size(),
                "macro_micro_f1: label vector length differs from finding list");
  }
  auto f1 = [](double tp, double fp, double fn) {
    const double denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2 * tp / denom;
  };
  F1Result out;
  double tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t f = 0; f < findings.size(); ++f) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i].values[f] != 0;
      const bool g = gts[i].values[f] != 0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    out.per_finding.push_back(f1(tp, fp, fn));
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  double sum = 0;
  for (double v : out.per_finding) sum += v;
  out.macro = findings.empty() ? 0.0 : sum / static_cast<double>(findings.size());
  out.micro = f1(tp_all, fp_all, fn_all);
  return out;
}

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n) {
  nn::require(n >= 1, "bleu: n must be at least 1");
  BleuStats s{std::vector<double>(static_cast<std::size_t>(n), 0.0), std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  accumulate_bleu(s, candidate, reference, n);
  return finish_bleu(s, n);
}

double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, int n) {
  nn::require(n >= 1, "corpus_bleu: n must be at least 1");
  nn::require(candidates.size() == references.size(), "corpus_bleu: candidate and reference counts differ");
  BleuStats s{std::vector<double>(static_cast<std::size_t>(n), 0.0), std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_bleu(s, candidates[i], references[i], n);
  return finish_bleu(s, n);
}

double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t m = candidate.size();
  const std::size_t n = reference.size();
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j)
      dp[i][j] = candidate[i - 1] == reference[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
  const double lcs = dp[m][n];
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(m);
  const double r = lcs / static_cast<double>(n);
  const double b2 = beta * beta;
  return 100.0 * (1 + b2) * p * r / (r + b2 * p);
}

std::size_t draw_index(std::uint64_t raw, std::size_t n) {
  const double u = static_cast<double>(raw >> 11) * 0x1.0p-53;
  return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

double percentile(std::vector<double> values, double q) {
  nn::require(!values.empty(), "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResult bootstrap(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& statistic,
                          const BootstrapSpec& spec, std::uint64_t seed) {
  nn::require(n >= 1, "bootstrap: needs at least one sample");
  nn::require(spec.samples >= 1, "bootstrap: samples must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(spec.samples));
  std::vector<std::size_t> idx(n);
  for (int b = 0; b < spec.samples; ++b) {
    for (auto& i : idx) i = draw_index(rng(), n);
    stats.push_back(statistic(idx));
  }
  const double tail = (1.0 - spec.interval) / 2.0;
  return {percentile(stats, 0.5), percentile(stats, tail), percentile(stats, 1.0 - tail), n};
}

BootstrapResult bootstrap_ci(const std::vector<double>& scores, const BootstrapSpec& spec, std::uint64_t seed) {
  return bootstrap(
      scores.size(),
      [&](const std::vector<std::size_t>& idx) {
        double s = 0;
        for (auto i : idx) s += scores[i];
        return s / static_cast<double>(idx.size());
      },
      spec, seed);
}

nlohmann::json to_json(const BootstrapResult& r, const nlohmann::json& conventions) {
  return {{"median", r.median}, {"ci_low", r.low}, {"ci_high", r.high}, {"n", r.n}, {"conventions", conventions}};
}

}  // namespace segprompt::metrics
