#pragma once

#include <iosfwd>

#include "fewtab/config.hpp"

namespace fewtab {

/// Command entry points shared by the CLI and the tests. Each returns a
/// process exit code: 0 success, 2 usage or config error, 3 runtime or
/// numeric error. Human-readable progress goes to `out`, errors to `err`.
int cmd_transform(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

/// Load the image corpus a config points at: a transform output directory
/// (manifest.json), a directory of class-named subdirectories holding PNGs,
/// or the built-in synthetic generator ("synthetic").
ImagePool load_corpus(const ExperimentConfig& cfg);

}  // namespace fewtab
