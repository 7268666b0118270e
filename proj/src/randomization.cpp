#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "stdmarg/errors.hpp"
#include "stdmarg/trial_sim.hpp"

namespace stdmarg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index, StreamRole role) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ index);
  return splitmix64(h ^ static_cast<std::uint64_t>(role));
}

std::mt19937_64 make_stream(std::uint64_t master, std::uint64_t index, StreamRole role) {
  return std::mt19937_64(stream_seed(master, index, role));
}

std::string_view to_string(RandomizationKind kind) noexcept {
  switch (kind) {
    case RandomizationKind::Simple: return "simple";
    case RandomizationKind::PermutedBlock: return "permuted_block";
    case RandomizationKind::StratifiedPermutedBlock: return "stratified_permuted_block";
  }
  return "?";
}

RandomizationKind parse_randomization_kind(std::string_view name) {
  if (name == "simple") return RandomizationKind::Simple;
  if (name == "permuted_block") return RandomizationKind::PermutedBlock;
  if (name == "stratified_permuted_block" || name == "stratified") {
    return RandomizationKind::StratifiedPermutedBlock;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown randomization '" + std::string(name) + "'");
}

std::string RandomizationScheme::label() const {
  switch (kind) {
    case RandomizationKind::Simple: return "simple";
    case RandomizationKind::PermutedBlock: return "permuted_block(" + std::to_string(block_size) + ")";
    case RandomizationKind::StratifiedPermutedBlock: {
      std::string s = "stratified(" + std::to_string(block_size) + ";";
      for (std::size_t i = 0; i < strata_covariates.size(); ++i) {
        if (i) s += ",";
        s += "x" + std::to_string(strata_covariates[i]);
      }
      return s + ")";
    }
  }
  return "?";
}

namespace {

void check_probabilities(const std::vector<double>& p) {
  if (p.size() < 2) throw Error(ErrorKind::InvalidArgument, "p_assign needs at least two arms");
  double total = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) throw Error(ErrorKind::InvalidArgument, "allocation probabilities must be positive");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "p_assign must sum to 1");
}

// Arm labels making up one balanced block, in arm order.
std::vector<int> block_template(const RandomizationScheme& scheme) {
  if (scheme.block_size <= 0) {
    throw Error(ErrorKind::OddBlockForProbabilities, "block size must be positive");
  }
  std::vector<int> block;
  for (std::size_t a = 0; a < scheme.p_assign.size(); ++a) {
    const double count = scheme.p_assign[a] * scheme.block_size;
    const double rounded = std::round(count);
    if (std::abs(count - rounded) > 1e-9) {
      throw Error(ErrorKind::OddBlockForProbabilities,
                  "block size " + std::to_string(scheme.block_size) +
                      " cannot hold allocation probability " + std::to_string(scheme.p_assign[a]));
    }
    block.insert(block.end(), static_cast<std::size_t>(rounded), static_cast<int>(a));
  }
  return block;
}

class BlockSequence {
 public:
  explicit BlockSequence(std::vector<int> tmpl) : template_(std::move(tmpl)) {}

  int next(std::mt19937_64& rng) {
    if (pos_ == current_.size()) {
      current_ = template_;
      std::shuffle(current_.begin(), current_.end(), rng);
      pos_ = 0;
    }
    return current_[pos_++];
  }

 private:
  std::vector<int> template_;
  std::vector<int> current_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<int> assign_treatments(int n, const RandomizationScheme& scheme,
                                   const Eigen::MatrixXd& covariates, std::mt19937_64& rng) {
  check_probabilities(scheme.p_assign);
  std::vector<int> arms(static_cast<std::size_t>(std::max(n, 0)));

  if (scheme.kind == RandomizationKind::Simple) {
    std::discrete_distribution<int> pick(scheme.p_assign.begin(), scheme.p_assign.end());
    for (auto& a : arms) a = pick(rng);
    return arms;
  }

  const auto tmpl = block_template(scheme);
  if (scheme.kind == RandomizationKind::PermutedBlock) {
    BlockSequence seq(tmpl);
    for (auto& a : arms) a = seq.next(rng);
    return arms;
  }

  if (covariates.rows() != n) {
    throw Error(ErrorKind::DimensionMismatch, "covariate rows must match n");
  }
  for (int c : scheme.strata_covariates) {
    if (c < 0 || c >= covariates.cols()) {
      throw Error(ErrorKind::InvalidArgument, "stratification covariate " + std::to_string(c) + " does not exist");
    }
  }
  // Independent block sequence per stratum; patients arrive in row order.
  std::map<std::vector<double>, BlockSequence> strata;
  std::vector<double> key(scheme.strata_covariates.size());
  for (int i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < key.size(); ++s) {
      const double v = covariates(i, scheme.strata_covariates[s]);
      if (v != std::floor(v)) {
        throw Error(ErrorKind::InvalidArgument, "stratification requires discrete covariates");
      }
      key[s] = v;
    }
    auto it = strata.try_emplace(key, tmpl).first;
    arms[static_cast<std::size_t>(i)] = it->second.next(rng);
  }
  return arms;
}

}  // namespace stdmarg
