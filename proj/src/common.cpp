#include "odtmpc/errors.hpp"
#include "odtmpc/types.hpp"

namespace odtmpc {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::NonConvergent: return "NonConvergent";
    case Errc::Infeasible: return "Infeasible";
    case Errc::MaxIterations: return "MaxIterations";
    case Errc::TooLarge: return "TooLarge";
    case Errc::NotCovered: return "NotCovered";
    case Errc::NotSeparable: return "NotSeparable";
    case Errc::TooManyPoints: return "TooManyPoints";
    case Errc::AllInfeasible: return "AllInfeasible";
    case Errc::Diverged: return "Diverged";
    case Errc::TooShort: return "TooShort";
    case Errc::ControllerFailure: return "ControllerFailure";
    case Errc::DegenerateSplit: return "DegenerateSplit";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

void StateBox::validate() const {
  require(lo.size() == hi.size(), "state box bounds differ in dimension");
  require(lo.size() >= 1, "state box must have at least one dimension");
  for (int j = 0; j < lo.size(); ++j) {
    require(std::isfinite(lo[j]) && std::isfinite(hi[j]), "state box bounds must be finite");
    require(lo[j] < hi[j], "state box requires lo < hi componentwise");
  }
}

bool StateBox::contains(const Vector& x, double tol) const {
  if (x.size() != lo.size()) return false;
  for (int j = 0; j < x.size(); ++j) {
    if (x[j] < lo[j] - tol || x[j] > hi[j] + tol) return false;
  }
  return true;
}

StateBox StateBox::uniform(int n, double lo, double hi) {
  return StateBox{Vector::Constant(n, lo), Vector::Constant(n, hi)};
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace odtmpc
