#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace dbmif {

// Scale-invariant SDR in dB: project the estimate onto the reference and
// compare projected power to residual power.  Degenerate cases saturate at
// +/- 120 dB so reports stay finite and sortable.
double si_sdr(const std::vector<double>& ref, const std::vector<double>& est);

struct DbiSummary {
    double median_kstar = 0.0;
    double mean_kstar = 0.0;
    std::map<int, int64_t> histogram;  // stopping iteration -> frame count
};

DbiSummary summarize_dbi(const std::vector<int>& kstars);

}  // namespace dbmif
