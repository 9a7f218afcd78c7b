#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>

#include "fsk/netsim/envelope.hpp"

namespace fsk {

// Running moments for message-age samples.
struct TauStat {
    std::uint64_t count = 0;
    double sum = 0.0, sumsq = 0.0;
    std::uint64_t min = 0, max = 0;

    void add(std::uint64_t tau) {
        if (count == 0) { min = max = tau; }
        else {
            if (tau < min) min = tau;
            if (tau > max) max = tau;
        }
        ++count;
        sum += static_cast<double>(tau);
        sumsq += static_cast<double>(tau) * static_cast<double>(tau);
    }

    void merge(const TauStat& o) {
        if (o.count == 0) return;
        if (count == 0) { *this = o; return; }
        if (o.min < min) min = o.min;
        if (o.max > max) max = o.max;
        count += o.count;
        sum += o.sum;
        sumsq += o.sumsq;
    }

    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
    double stddev() const {
        if (count == 0) return 0.0;
        double m = mean();
        double var = sumsq / static_cast<double>(count) - m * m;
        return var > 0.0 ? std::sqrt(var) : 0.0;
    }
};

// Per-endpoint accounting. Times are virtual (iteration units) under the
// simulator and wall seconds under TCP.
struct EndpointStats {
    std::uint64_t messages_sent = 0;
    std::uint64_t messages_received = 0;
    std::uint64_t messages_superseded = 0;  // coalesced away before delivery
    double compute_seconds = 0.0;
    double comm_seconds = 0.0;
    // (sender, kind) -> ages of envelopes this endpoint consumed
    std::map<std::pair<int, Kind>, TauStat> tau;

    TauStat tau_merged() const {
        TauStat all;
        for (const auto& [key, st] : tau) all.merge(st);
        return all;
    }
};

} // namespace fsk
