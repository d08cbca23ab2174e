#include "bks/zoo.hpp"

#include "bks/errors.hpp"

namespace bks {

const std::vector<ZooEntry>& model_zoo() {
  static const std::vector<ZooEntry> zoo = [] {
    std::vector<ZooEntry> z;
    z.push_back({"tiny", MlpSpec{{16, 32, 8}, {}, false, false}, 32});

    MlpSpec gated{{8, 16, 4}, {}, false, false};
    gated.branches.push_back(
        {8, [](std::uint64_t it, int rank) { return !(rank == 0 && it % 2 == 1); }});
    gated.branches.push_back({4, [](std::uint64_t, int) { return false; }});
    z.push_back({"gated", gated, 16});

    z.push_back({"buffered", MlpSpec{{8, 16, 4}, {}, false, true}, 16});
    z.push_back({"inverted", MlpSpec{{8, 16, 16, 4}, {}, true, false}, 16});
    z.push_back(
        {"wide", MlpSpec{{256, 256, 256, 256, 256, 16}, {}, false, false}, 64});
    z.push_back(
        {"deep",
         MlpSpec{{128, 128, 128, 128, 128, 128, 128, 128, 128}, {}, false, false},
         32});
    return z;
  }();
  return zoo;
}

const ZooEntry& zoo_model(const std::string& name) {
  for (const auto& e : model_zoo()) {
    if (e.name == name) {
      return e;
    }
  }
  std::string known;
  for (const auto& e : model_zoo()) {
    known += " " + e.name;
  }
  throw UsageError(detail::str("unknown model '", name, "'; known:", known));
}

} // namespace bks
