#include "odtmpc/dataset.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/qp.hpp"
#include "odtmpc/random.hpp"
#include "parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

namespace odtmpc {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'O', 'D', 'T', 'D', 'S', 'B', 'I', 'N'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

void write_doubles(std::ostream& out, const double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t v = to_le(std::bit_cast<std::uint64_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

void read_doubles(std::istream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<double>(to_le(std::bit_cast<std::uint64_t>(data[i])));
    }
  }
}

std::uint64_t payload_checksum(const RowMatrix& X, const RowMatrix& U) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const RowMatrix& M) {
    for (Eigen::Index i = 0; i < M.size(); ++i) {
      const std::uint64_t v = to_le(std::bit_cast<std::uint64_t>(M.data()[i]));
      h = fnv1a(&v, sizeof v, h);
    }
  };
  mix(X);
  mix(U);
  return h;
}

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

bool Dataset::operator==(const Dataset& o) const {
  auto same_bits = [](const RowMatrix& a, const RowMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  };
  return same_bits(X, o.X) && same_bits(U, o.U) && delta_x == o.delta_x && problem_id == o.problem_id &&
         box.lo == o.box.lo && box.hi == o.box.hi;
}

StateBox default_box(std::string_view problem_id) {
  if (problem_id == "case1") return StateBox::uniform(2, -1.5, 1.5);
  if (problem_id == "case2") return StateBox::uniform(4, -1.0, 1.0);
  fail(Errc::InvalidArgument, "no default sampling box for problem '" + std::string(problem_id) + "'");
}

Grid::Grid(StateBox box, double delta) : box_(std::move(box)), delta_(delta) {
  box_.validate();
  require(std::isfinite(delta) && delta > 0.0, "grid size delta must be positive");
  for (int j = 0; j < box_.dim(); ++j) {
    // Points lo + k delta with k delta <= (hi - lo); a relative slack keeps
    // an endpoint that is hit up to rounding.
    const double span = (box_.hi[j] - box_.lo[j]) / delta;
    const double k = std::floor(span * (1.0 + 1e-12) + 1e-9);
    require(k < 9.0e15, "grid axis too long");
    counts_.push_back(static_cast<std::uint64_t>(k) + 1);
    if (size_ > ~std::uint64_t{0} / counts_.back()) fail(Errc::TooManyPoints, "grid size overflows 64 bits");
    size_ *= counts_.back();
  }
}

Vector Grid::point(std::uint64_t index) const {
  const int n = box_.dim();
  Vector x(n);
  for (int j = n - 1; j >= 0; --j) {
    const auto c = counts_[static_cast<std::size_t>(j)];
    const auto k = index % c;
    index /= c;
    x[j] = box_.lo[j] + static_cast<double>(k) * delta_;
  }
  return x;
}

RowMatrix grid_states(const StateBox& box, double delta, std::uint64_t cap) {
  const Grid grid(box, delta);
  if (grid.size() > cap) {
    fail(Errc::TooManyPoints, "grid has " + std::to_string(grid.size()) + " points, above the cap of " +
                                  std::to_string(cap));
  }
  RowMatrix out(static_cast<Eigen::Index>(grid.size()), box.dim());
  for (std::uint64_t i = 0; i < grid.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = grid.point(i).transpose();
  return out;
}

std::vector<std::uint64_t> sample_indices(std::uint64_t population, std::uint64_t count, std::uint64_t seed) {
  require(count <= population, "cannot sample more points than available");
  std::vector<std::uint64_t> out;
  if (count == population) {
    out.resize(static_cast<std::size_t>(population));
    for (std::uint64_t i = 0; i < population; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  // Floyd's algorithm: exactly `count` draws, uniform over subsets.
  Rng rng(seed);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(count) * 2);
  for (std::uint64_t j = population - count; j < population; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

RowMatrix subsample(const RowMatrix& points, std::size_t target, std::uint64_t seed) {
  const auto idx = sample_indices(static_cast<std::uint64_t>(points.rows()), target, seed);
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), points.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

RowMatrix subsample_grid(const StateBox& box, double delta, std::size_t target, std::uint64_t seed) {
  const Grid grid(box, delta);
  const auto idx = sample_indices(grid.size(), target, seed);
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), box.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = grid.point(idx[i]).transpose();
  return out;
}

RowMatrix uniform_states(const StateBox& box, std::size_t count, std::uint64_t seed) {
  box.validate();
  Rng rng(seed);
  RowMatrix out(static_cast<Eigen::Index>(count), box.dim());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < box.dim(); ++j) out(i, j) = rng.uniform(box.lo[j], box.hi[j]);
  }
  return out;
}

Dataset generate_dataset(const MpcProblem& problem, const RowMatrix& states, int parallelism, double delta_x,
                         const StateBox& box, std::string problem_id, GenerateReport* report) {
  const auto t0 = std::chrono::steady_clock::now();
  require(states.rows() > 0, "generate_dataset: no states given");
  require(states.cols() == problem.n(), "generate_dataset: states have wrong dimension");
  const CondensedQp qp = condense(problem);
  const auto S = static_cast<std::size_t>(states.rows());
  const int m = problem.m();

  RowMatrix labels(states.rows(), m);
  std::vector<char> keep(S, 0);
  detail::parallel_slices(S, parallelism, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      // Cold start per state: the label never depends on slice boundaries.
      const QpSolution sol = solve_qp(qp, states.row(r).transpose());
      if (sol.status == QpStatus::Infeasible) continue;
      if (sol.status != QpStatus::Optimal) {
        fail(Errc::MaxIterations, "QP did not converge at dataset row " + std::to_string(i));
      }
      labels.row(r) = sol.u0.transpose();
      keep[i] = 1;
    }
  });

  const auto retained = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
  if (retained == 0) fail(Errc::AllInfeasible, "every sampled state is infeasible");

  Dataset data;
  data.X.resize(static_cast<Eigen::Index>(retained), states.cols());
  data.U.resize(static_cast<Eigen::Index>(retained), m);
  Eigen::Index out = 0;
  for (std::size_t i = 0; i < S; ++i) {
    if (!keep[i]) continue;
    data.X.row(out) = states.row(static_cast<Eigen::Index>(i));
    data.U.row(out) = labels.row(static_cast<Eigen::Index>(i));
    ++out;
  }
  data.delta_x = delta_x;
  data.box = box;
  data.problem_id = std::move(problem_id);
  if (report) {
    report->retained = retained;
    report->dropped = S - retained;
    report->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return data;
}

std::uint64_t dataset_checksum(const Dataset& data) { return payload_checksum(data.X, data.U); }

void save_dataset(const Dataset& data, const std::string& path) {
  require(data.X.rows() == data.U.rows(), "dataset X and U row counts differ");
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << dataset_checksum(data);
  const json header{{"format", "odtmpc-dataset"},
                    {"version", 1},
                    {"rows", data.X.rows()},
                    {"n", data.n()},
                    {"m", data.m()},
                    {"delta_x", data.delta_x},
                    {"box", {{"lo", vec_json(data.box.lo)}, {"hi", vec_json(data.box.hi)}}},
                    {"problem_id", data.problem_id},
                    {"byte_order", "little"},
                    {"checksum_fnv1a64", hex.str()}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = to_le(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_doubles(out, data.X.data(), static_cast<std::size_t>(data.X.size()));
  write_doubles(out, data.U.data(), static_cast<std::size_t>(data.U.size()));
  if (!out) fail(Errc::Io, "write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open dataset '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    fail(Errc::SchemaMismatch, "'" + path + "' is not an odtmpc dataset");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = to_le(len);
  if (!in || len > (1u << 24)) fail(Errc::SchemaMismatch, "dataset header length is invalid");
  std::string text(static_cast<std::size_t>(len), '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(Errc::SchemaMismatch, "truncated dataset header");

  Dataset data;
  std::string checksum;
  try {
    const json header = json::parse(text);
    if (header.at("format") != "odtmpc-dataset" || header.at("version") != 1) {
      fail(Errc::SchemaMismatch, "unsupported dataset format/version");
    }
    const auto rows = header.at("rows").get<Eigen::Index>();
    const auto n = header.at("n").get<Eigen::Index>();
    const auto m = header.at("m").get<Eigen::Index>();
    if (rows < 0 || n < 1 || m < 1) fail(Errc::SchemaMismatch, "invalid dataset dimensions");
    data.X.resize(rows, n);
    data.U.resize(rows, m);
    data.delta_x = header.at("delta_x").get<double>();
    data.box.lo = json_vec(header.at("box").at("lo"));
    data.box.hi = json_vec(header.at("box").at("hi"));
    data.problem_id = header.at("problem_id").get<std::string>();
    checksum = header.at("checksum_fnv1a64").get<std::string>();
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, std::string("dataset header: ") + e.what());
  }
  read_doubles(in, data.X.data(), static_cast<std::size_t>(data.X.size()));
  read_doubles(in, data.U.data(), static_cast<std::size_t>(data.U.size()));
  if (!in) fail(Errc::SchemaMismatch, "truncated dataset payload");
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << dataset_checksum(data);
  if (hex.str() != checksum) fail(Errc::SchemaMismatch, "dataset checksum mismatch");
  return data;
}

void export_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot open '" + path + "' for writing");
  out << "# odtmpc dataset export (lossy decimal, 12 significant digits); problem=" << data.problem_id
      << " delta_x=" << data.delta_x << '\n';
  for (int j = 0; j < data.n(); ++j) out << (j ? "," : "") << 'x' << (j + 1);
  for (int j = 0; j < data.m(); ++j) out << ",u" << (j + 1);
  out << '\n' << std::setprecision(12);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (int j = 0; j < data.n(); ++j) out << (j ? "," : "") << data.X(i, j);
    for (int j = 0; j < data.m(); ++j) out << ',' << data.U(i, j);
    out << '\n';
  }
  if (!out) fail(Errc::Io, "write to '" + path + "' failed");
}

}  // namespace odtmpc
