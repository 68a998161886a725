#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dosepred::cli {

struct PhantomArgs {
  int n = 1;
  std::uint64_t seed = 1;
  int dims = 64;
  std::filesystem::path out;
};

struct PreprocessArgs {
  std::filesystem::path cases;
  std::filesystem::path out;  // default: <cases>_prep<size>
  std::string variant = "ct_contours_beam";
  int size = 64;
  std::vector<int> crop{0};  // one value per axis or one for all; 0 keeps the whole volume
  bool ptv_override = false;
};

struct BeamdoseArgs {
  std::filesystem::path case_dir;
};

struct TrainArgs {
  std::filesystem::path cases;
  std::filesystem::path config;
  std::filesystem::path out;
  std::filesystem::path resume;
  std::optional<std::string> loss;
  std::string plan = "consistent";
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  int validation = 0;
};

struct PredictArgs {
  std::filesystem::path model;
  std::filesystem::path case_dir;
  std::filesystem::path cases;
  std::filesystem::path out;
};

struct ScoreArgs {
  std::filesystem::path pred;
  std::filesystem::path real;
  std::filesystem::path out;
  std::string plan = "consistent";
  bool body_only = false;
};

struct GradcheckArgs {
  std::string module = "all";
};

int run_phantom(const PhantomArgs& a);
int run_preprocess(const PreprocessArgs& a);
int run_beamdose(const BeamdoseArgs& a);
int run_train(const TrainArgs& a);
int run_predict(const PredictArgs& a);
int run_score(const ScoreArgs& a);
int run_gradcheck(const GradcheckArgs& a);

}  // namespace dosepred::cli
