#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maris/autograd.hpp"

namespace maris {

/// Ordered collection of named trainable arrays.
class ParamSet {
 public:
  void add(std::string name, ag::Var v) { entries_.emplace_back(std::move(name), std::move(v)); }
  void extend(const ParamSet& other, const std::string& prefix = "");

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Throws ConfigError when absent.
  ag::Var& at(const std::string& name);
  const ag::Var& at(const std::string& name) const;

  void zero_grad();
  std::uint64_t checksum() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Xavier-normal initialized weight matrix.
ag::Var xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain = 1.0);
ag::Var zeros(std::size_t rows, std::size_t cols);

/// Weight + bias pair for y = x W + b.
struct Linear {
  ag::Var weight;
  ag::Var bias;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0);
  static Linear zero(std::size_t in, std::size_t out);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
  void register_params(ParamSet& set, const std::string& name) const;
};

/// Two linear layers with SiLU between.
struct Mlp {
  Linear first;
  Linear second;

  static Mlp init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);
  ag::Var operator()(const ag::Var& x) const { return second(ag::silu(first(x))); }
  void register_params(ParamSet& set, const std::string& name) const;
};

}  // namespace maris
