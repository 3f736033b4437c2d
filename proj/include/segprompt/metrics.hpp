#pragma once

#include "segprompt/masks.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace segprompt::metrics {

using masks::BinaryMask;

/// 2|P∩G| / (|P|+|G|); nullopt when both are empty (excluded from positives-only aggregation).
std::optional<double> dice(const BinaryMask& pred, const BinaryMask& gt);

/// Zhang–Suen thinning iterated to convergence.
BinaryMask skeletonize(const BinaryMask& m);

/// Harmonic mean of topology precision |S(P)∩G|/|S(P)| and sensitivity |S(G)∩P|/|S(G)|;
/// nullopt when either skeleton is empty.
std::optional<double> cl_dice(const BinaryMask& pred, const BinaryMask& gt);

/// Findings scored by the mask-relevant F1.
enum class Finding { LungOpacity, Cardiomegaly, Pneumothorax, SupportDevices, PleuralEffusion };
inline constexpr std::array<Finding, 5> kMaskRelevantFindings = {
    Finding::LungOpacity, Finding::Cardiomegaly, Finding::Pneumothorax, Finding::SupportDevices,
    Finding::PleuralEffusion};
std::string_view finding_name(Finding f);

struct LabelVector {
  std::vector<Finding> findings;
  std::vector<std::uint8_t> values;
};

struct F1Result {
  double macro = 0.0;
  double micro = 0.0;
  std::vector<double> per_finding;
};

/// Per-finding F1 averaged (macro) and F1 of the pooled counts (micro). A zero
/// denominator scores 0.
F1Result macro_micro_f1(const std::vector<LabelVector>& preds, const std::vector<LabelVector>& gts);

/// Modified n-gram precision with clipping, geometric mean over 1..n, brevity
/// penalty, scaled to [0,100]. No smoothing: any zero precision gives 0.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n = 4);

/// Corpus-level BLEU: clipped counts and lengths pooled over all pairs.
double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, int n = 4);

inline constexpr double kRougeBeta = 1.2;

/// LCS-based F-measure with β = kRougeBeta, scaled to [0,100].
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
               double beta = kRougeBeta);

struct BootstrapSpec {
  int samples = 500;
  double interval = 0.95;
};

struct BootstrapResult {
  double median = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::size_t n = 0;
};

/// Resampling index in [0, n) drawn from a 64-bit Mersenne Twister: floor(u·n)
/// with u the top 53 bits of the draw scaled to [0,1).
std::size_t draw_index(std::uint64_t raw, std::size_t n);

/// Percentile with linear interpolation between order statistics (q in [0,1]).
double percentile(std::vector<double> values, double q);

/// Bootstrap over sample indices: `statistic` receives a resampled index list.
/// Reports the median and the central `interval` of the bootstrap distribution.
BootstrapResult bootstrap(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& statistic,
                          const BootstrapSpec& spec, std::uint64_t seed);

/// Bootstrap of the mean of per-sample scores.
BootstrapResult bootstrap_ci(const std::vector<double>& scores, const BootstrapSpec& spec, std::uint64_t seed);

nlohmann::json to_json(const BootstrapResult& r, const nlohmann::json& conventions = nlohmann::json::object());

}  // namespace segprompt::metrics
