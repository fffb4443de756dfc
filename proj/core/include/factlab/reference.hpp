#pragma once

namespace factlab::reference {

// Published operating points measured on Pythia-1.4b with the full-scale
// world-capital task. They are rendered in reports as comparison rows next to
// the toy-scale results; they are context, not targets.
inline constexpr double kBaselineInContextPct = 26.0;
inline constexpr double kBaselineMemorizedPct = 43.0;
inline constexpr double kAfterMemoryDownInContextPct = 86.2;
inline constexpr double kAfterMemoryDownMemorizedPct = 4.0;
inline constexpr double kMemoryHeadAlpha = -0.7;
inline constexpr double kTuningSetFlipPct = 86.0;
inline constexpr const char* kMemoryHeadName = "L15H7";
inline constexpr const char* kContextHeadName = "L19H12";
inline constexpr int kFullScaleCountries = 248;
inline constexpr int kFullScalePromptCount = 62992;
inline constexpr int kFullScalePerBinApprox = 6300;

} // namespace factlab::reference
