#pragma once

// Command-line front end: synth, dump-episodes, train, eval, attention-maps, report.
//
// Exit codes: 0 success, 1 usage or data error, 2 I/O failure, 3 numeric failure.

#include <ostream>
#include <string>
#include <vector>

#include "fewshot/image.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot::cli {

enum ExitCode { kOk = 0, kUserError = 1, kIoError = 2, kNumericError = 3 };

/// `args` excludes the program name. Machine-readable output goes to `out`,
/// JSON-lines logs and the human summary to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Channel-averaged gate (C,h,w) min-max scaled to [0,255] (a constant map
/// becomes 128) and nearest-upscaled to width×height.
image::LabelMap gate_image(const Tensor& gate, int width, int height);

}  // namespace fewshot::cli
