// SPDX-License-Identifier: Apache-2.0
#include "slu/nn.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu::nn {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void write_values(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << text::exact(values[i]);
    out << ((i % 8 == 7 || i + 1 == values.size()) ? '\n' : ' ');
  }
}

std::string read_token(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw FormatError("model file truncated");
  return tok;
}

void expect_token(std::istream& in, const std::string& expected) {
  const auto tok = read_token(in);
  if (tok != expected) throw FormatError("model file: expected '" + expected + "', found '" + tok + "'");
}

std::size_t read_size(std::istream& in) {
  const auto tok = read_token(in);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) throw FormatError("model file: bad count '" + tok + "'");
  return v;
}

std::vector<double> read_values(std::istream& in, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) {
    const auto tok = read_token(in);
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
      throw FormatError("model file: bad value '" + tok + "'");
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace slu::nn
