#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "fsk/errors.hpp"
#include "fsk/rng.hpp"

namespace fsk {

// Message delay injected by the simulator, counted in receiver-local
// iterations. An envelope stamped k becomes readable once the receiver is
// executing iteration >= k + delay; the minimum meaningful delay is 1
// (readable at the receiver's very next read), which is what the zero model
// produces. Delays are drawn from a per-(sender, receiver, kind) stream so
// delivery is a pure function of the seed.
struct DelaySchedule {
    enum class Model { zero, fixed, uniform, per_link };
    Model model = Model::zero;
    std::uint64_t fixed_d = 1;
    std::uint64_t lo = 1, hi = 1;
    std::map<std::pair<int, int>, std::uint64_t> per_link_table;  // (sender, receiver) -> d
    std::uint64_t seed = 0;

    static DelaySchedule zero() { return DelaySchedule{}; }
    static DelaySchedule fixed(std::uint64_t d) {
        DelaySchedule s;
        s.model = Model::fixed;
        s.fixed_d = d == 0 ? 1 : d;
        return s;
    }
    static DelaySchedule uniform(std::uint64_t lo, std::uint64_t hi, std::uint64_t seed) {
        if (lo > hi) throw ConfigError("uniform delay needs lo <= hi");
        DelaySchedule s;
        s.model = Model::uniform;
        s.lo = lo == 0 ? 1 : lo;
        s.hi = hi == 0 ? 1 : hi;
        s.seed = seed;
        return s;
    }

    std::uint64_t sample(SplitMix64& link_rng, int sender, int receiver) const {
        switch (model) {
            case Model::zero: return 1;
            case Model::fixed: return fixed_d;
            case Model::uniform: return link_rng.uniform_int(lo, hi);
            case Model::per_link: {
                auto it = per_link_table.find({sender, receiver});
                std::uint64_t d = it == per_link_table.end() ? 1 : it->second;
                return d == 0 ? 1 : d;
            }
        }
        return 1;
    }

    std::string name() const {
        switch (model) {
            case Model::zero: return "zero";
            case Model::fixed: return "fixed(" + std::to_string(fixed_d) + ")";
            case Model::uniform:
                return "uniform(" + std::to_string(lo) + "," + std::to_string(hi) + ")";
            case Model::per_link: return "per_link";
        }
        return "?";
    }
};

} // namespace fsk
