#pragma once

// Field snapshots: flat little-endian binary layout and plot CSV; number
// formatting and content hashing shared by every artifact writer.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "gflow/fields.hpp"

namespace gflow {

/// Shortest round-trip decimal representation; identical doubles always
/// print identically, which keeps CSV artifacts bit-reproducible.
inline std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double: conversion failed");
  return std::string(buf.data(), end);
}

/// Lowercase hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string sha256_hex(std::span<const double> values) {
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(values.data()),
                                     values.size() * sizeof(double)));
}

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[std::size_t(i)] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw std::runtime_error("snapshot: truncated header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[std::size_t(i)];
  return v;
}

}  // namespace detail

/// Binary snapshot: int64 LE header {dim, m, cells per axis..., time steps}
/// followed by float64 LE values in time-major, row-major space, component
/// order.
inline void write_snapshot(std::ostream& os, const SpaceTimeField& u) {
  const Grid& g = u.grid();
  detail::put_u64(os, std::uint64_t(g.dim));
  detail::put_u64(os, std::uint64_t(u.components()));
  for (int a = 0; a < g.dim; ++a) detail::put_u64(os, std::uint64_t(g.cells[a]));
  detail::put_u64(os, std::uint64_t(g.n_time_steps));
  for (double v : u.values()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("snapshot: write failed");
}

struct SnapshotHeader {
  int dim = 1;
  int components = 1;
  std::array<int, 2> cells{0, 0};
  int n_time_steps = 1;
};

/// Reads a snapshot. Extents are not part of the layout; they come from
/// `extents` (spatial box and T, other fields ignored) or default to unit.
inline SpaceTimeField read_snapshot(std::istream& is, const Grid* extents = nullptr,
                                    BoundaryKind bc = BoundaryKind::free) {
  SnapshotHeader h;
  h.dim = int(detail::get_u64(is));
  if (h.dim != 1 && h.dim != 2) throw std::runtime_error("snapshot: bad dim");
  h.components = int(detail::get_u64(is));
  for (int a = 0; a < h.dim; ++a) h.cells[std::size_t(a)] = int(detail::get_u64(is));
  h.n_time_steps = int(detail::get_u64(is));
  Grid g;
  if (extents) g = *extents;
  else {
    g.lo = {0.0, 0.0};
    g.hi = {1.0, h.dim == 2 ? 1.0 : 0.0};
    g.t_final = 1.0;
  }
  g.dim = h.dim;
  g.cells = h.cells;
  g.n_time_steps = h.n_time_steps;
  SpaceTimeField u(g, h.components, bc);
  for (double& v : u.values()) v = std::bit_cast<double>(detail::get_u64(is));
  return u;
}

/// Plot CSV: t, x, [y,] component, value.
inline void write_field_csv(std::ostream& os, const SpaceTimeField& u) {
  const Grid& g = u.grid();
  os << (g.dim == 2 ? "t,x,y,component,value\n" : "t,x,component,value\n");
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      const Point x = g.point(n);
      for (int c = 0; c < u.components(); ++c) {
        os << fmt_double(g.t(k)) << ',' << fmt_double(x[0]) << ',';
        if (g.dim == 2) os << fmt_double(x[1]) << ',';
        os << c << ',' << fmt_double(u(k, n, c)) << '\n';
      }
    }
}

/// key = value sidecar, one pair per line, keys sorted.
inline void write_metadata(std::ostream& os, const std::map<std::string, std::string>& meta) {
  for (const auto& [k, v] : meta) os << k << " = " << v << '\n';
}

inline std::map<std::string, std::string> read_metadata(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos)
      throw std::runtime_error("metadata: line " + std::to_string(lineno) + ": expected 'key = value'");
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace gflow
