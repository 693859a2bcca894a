#include "maris/params.hpp"

#include <cmath>

#include "maris/random.hpp"

namespace maris {

void ParamSet::extend(const ParamSet& other, const std::string& prefix) {
  for (const auto& [name, v] : other) add(prefix + name, v);
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

ag::Var& ParamSet::at(const std::string& name) {
  for (auto& [n, v] : entries_)
    if (n == name) return v;
  throw ConfigError("unknown parameter '" + name + "'");
}

const ag::Var& ParamSet::at(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw ConfigError("unknown parameter '" + name + "'");
}

void ParamSet::zero_grad() {
  for (auto& [n, v] : entries_) v.zero_grad();
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [n, v] : entries_) h = maris::checksum(v.value().data(), h);
  return h;
}

ag::Var xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return ag::parameter(random_normal(fan_in, fan_out, stddev, rng));
}

ag::Var zeros(std::size_t rows, std::size_t cols) { return ag::parameter(Matrix(rows, cols)); }

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain) {
  return {xavier(in, out, rng, gain), zeros(1, out)};
}

Linear Linear::zero(std::size_t in, std::size_t out) { return {zeros(in, out), zeros(1, out)}; }

void Linear::register_params(ParamSet& set, const std::string& name) const {
  set.add(name + ".weight", weight);
  set.add(name + ".bias", bias);
}

Mlp Mlp::init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  return {Linear::init(in, hidden, rng), Linear::init(hidden, out, rng)};
}

void Mlp::register_params(ParamSet& set, const std::string& name) const {
  first.register_params(set, name + ".fc1");
  second.register_params(set, name + ".fc2");
}

}  // namespace maris
