// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/codistill.h"

#include <cstring>
#include <new>
#include <string>

#include "codistill/checkpoint.hpp"
#include "codistill/config.hpp"
#include "codistill/error.hpp"
#include "codistill/experiment.hpp"
#include "codistill/metrics.hpp"
#include "codistill/text.hpp"
#include "codistill/verify.hpp"

struct cd_config {
  codistill::ExperimentConfig value;
};

struct cd_model {
  codistill::MultiHeadNet net;
};

namespace {

thread_local std::string last_error;

cd_status fail(cd_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename Body>
cd_status guarded(Body body) {
  try {
    last_error.clear();
    return body();
  } catch (const codistill::ConfigError& e) {
    return fail(CD_ERR_CONFIG, e.what());
  } catch (const codistill::ShapeError& e) {
    return fail(CD_ERR_SHAPE, e.what());
  } catch (const codistill::DomainError& e) {
    return fail(CD_ERR_DOMAIN, e.what());
  } catch (const codistill::NumericError& e) {
    return fail(CD_ERR_NUMERIC, e.what());
  } catch (const codistill::FormatError& e) {
    return fail(CD_ERR_FORMAT, e.what());
  } catch (const codistill::IoError& e) {
    return fail(CD_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(CD_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CD_ERR_INTERNAL, "unknown failure");
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define CD_REQUIRE(ptr)                                               \
  do {                                                                \
    if ((ptr) == nullptr) return fail(CD_ERR_ARGUMENT, #ptr " is null"); \
  } while (0)

std::string metric_fields(const codistill::HeadMetrics& m) {
  using codistill::format_double;
  return format_double(m.loss) + "," + format_double(m.top1) + "," + format_double(m.top5) + "," +
         format_double(m.gap) + "," + format_double(m.map);
}

std::string run_rows(const codistill::RunOutcome& r) {
  std::string out;
  for (const auto& h : r.holdout) {
    out += std::to_string(r.seed) + "," + r.dir.string() + "," + (r.log.diverged ? "1" : "0") +
           "," + h.head + "," + metric_fields(h) + "\n";
  }
  if (r.holdout.empty()) {
    out += std::to_string(r.seed) + "," + r.dir.string() + "," + (r.log.diverged ? "1" : "0") +
           ",,,,,,\n";
  }
  return out;
}

constexpr const char* kRunHeader = "seed,dir,diverged,head,loss,top1,top5,gap,map\n";

}  // namespace

extern "C" {

const char* cd_version(void) { return "0.1.0"; }

const char* cd_last_error(void) { return last_error.c_str(); }

void cd_string_free(char* text) { delete[] text; }

cd_status cd_config_load(const char* path, cd_config** out) {
  CD_REQUIRE(path);
  CD_REQUIRE(out);
  return guarded([&] {
    *out = new cd_config{codistill::load_config(path)};
    return CD_OK;
  });
}

cd_status cd_config_parse(const char* text, cd_config** out) {
  CD_REQUIRE(text);
  CD_REQUIRE(out);
  return guarded([&] {
    *out = new cd_config{codistill::parse_config(text)};
    return CD_OK;
  });
}

cd_status cd_config_set_out(cd_config* config, const char* dir) {
  CD_REQUIRE(config);
  CD_REQUIRE(dir);
  if (*dir == '\0') return fail(CD_ERR_ARGUMENT, "output directory is empty");
  config->value.run.out = dir;
  return CD_OK;
}

cd_status cd_config_set_seeds(cd_config* config, const uint64_t* seeds, size_t count) {
  CD_REQUIRE(config);
  CD_REQUIRE(seeds);
  if (count == 0) return fail(CD_ERR_ARGUMENT, "seed list is empty");
  config->value.run.seeds.assign(seeds, seeds + count);
  return CD_OK;
}

cd_status cd_config_echo(const cd_config* config, char** text) {
  CD_REQUIRE(config);
  CD_REQUIRE(text);
  return guarded([&] {
    *text = copy_string(codistill::echo_config(config->value));
    return CD_OK;
  });
}

void cd_config_free(cd_config* config) { delete config; }

cd_status cd_train(const cd_config* config, char** result) {
  CD_REQUIRE(config);
  CD_REQUIRE(result);
  return guarded([&] {
    std::string out = kRunHeader;
    for (const auto& r : codistill::cmd_train(config->value)) out += run_rows(r);
    *result = copy_string(out);
    return CD_OK;
  });
}

cd_status cd_train_resume(const char* checkpoint, const char* out_dir, char** result) {
  CD_REQUIRE(checkpoint);
  CD_REQUIRE(out_dir);
  CD_REQUIRE(result);
  return guarded([&] {
    *result = copy_string(kRunHeader + run_rows(codistill::resume_train(checkpoint, out_dir)));
    return CD_OK;
  });
}

cd_status cd_eval(const char* checkpoint, const char* data_csv, const char* out_csv,
                  char** result) {
  CD_REQUIRE(checkpoint);
  CD_REQUIRE(result);
  return guarded([&] {
    std::optional<std::filesystem::path> data;
    if (data_csv != nullptr) data = data_csv;
    const codistill::MetricReport report = codistill::cmd_eval(checkpoint, data);
    if (out_csv != nullptr) codistill::write_eval_csv(report, out_csv);
    *result = copy_string(codistill::eval_csv(report));
    return CD_OK;
  });
}

cd_status cd_sweep(const cd_config* config, const char* axis, const double* values, size_t count,
                   size_t threads, char** result) {
  CD_REQUIRE(config);
  CD_REQUIRE(axis);
  CD_REQUIRE(values);
  CD_REQUIRE(result);
  return guarded([&] {
    const std::vector<double> list(values, values + count);
    const std::size_t n = threads == 0 ? codistill::sweep_threads() : threads;
    const auto sweep = codistill::cmd_sweep(config->value, codistill::parse_axis(axis), list, n);
    std::string out = std::string(codistill::kSweepSummaryHeader) + "\n";
    for (const auto& s : sweep.summary) {
      out += codistill::format_double(s.axis_value) + "," + std::to_string(s.runs);
      for (const auto& m : s.metrics) {
        out += "," + codistill::format_double(m.mean) + "," + codistill::format_double(m.uncertainty);
      }
      out += "\n";
    }
    *result = copy_string(out);
    return CD_OK;
  });
}

cd_status cd_verify(size_t trials, uint64_t seed, int* passed, char** result) {
  CD_REQUIRE(passed);
  CD_REQUIRE(result);
  if (trials == 0) return fail(CD_ERR_ARGUMENT, "trials must be at least 1");
  return guarded([&] {
    const codistill::VerifyReport report = codistill::run_verify(trials, seed);
    std::string out = "check,value,threshold,status\n";
    std::string failed;
    for (const auto& l : report.lines) {
      out += l.name + "," + codistill::format_double(l.value) + "," +
             codistill::format_double(l.threshold) + "," + (l.passed ? "pass" : "FAIL") + "\n";
      if (!l.passed) failed += (failed.empty() ? "" : ", ") + l.name;
    }
    *passed = report.passed() ? 1 : 0;
    *result = copy_string(out);
    if (!report.passed()) return fail(CD_ERR_VERIFY, "checks over threshold: " + failed);
    return CD_OK;
  });
}

cd_status cd_gen_data(const cd_config* config, const char* dir, char** path) {
  CD_REQUIRE(config);
  CD_REQUIRE(dir);
  CD_REQUIRE(path);
  return guarded([&] {
    *path = copy_string(codistill::cmd_gen_data(config->value.data, dir).string());
    return CD_OK;
  });
}

cd_status cd_model_load(const char* checkpoint, cd_model** out) {
  CD_REQUIRE(checkpoint);
  CD_REQUIRE(out);
  return guarded([&] {
    auto restored = codistill::restore(codistill::load_checkpoint(checkpoint));
    *out = new cd_model{std::move(restored.state.net)};
    return CD_OK;
  });
}

size_t cd_model_input_dim(const cd_model* model) {
  return model ? model->net.spec().input_dim : 0;
}

size_t cd_model_classes(const cd_model* model) {
  return model ? model->net.spec().head.classes : 0;
}

size_t cd_model_branches(const cd_model* model) { return model ? model->net.branch_count() : 0; }

size_t cd_model_param_count(const cd_model* model) {
  return model ? codistill::count_params(model->net.spec()) : 0;
}

cd_status cd_model_predict(const cd_model* model, const double* features, size_t rows,
                           double* scores) {
  CD_REQUIRE(model);
  CD_REQUIRE(features);
  CD_REQUIRE(scores);
  if (rows == 0) return fail(CD_ERR_ARGUMENT, "rows must be at least 1");
  if (model->net.spec().frame_input()) {
    return fail(CD_ERR_CONFIG, "frame-pooling models take frame sequences, not feature rows");
  }
  return guarded([&] {
    const std::size_t dim = model->net.spec().input_dim;
    std::vector<double> x(features, features + rows * dim);
    const codistill::Batch batch{codistill::Tensor({rows, dim}, std::move(x)), {}};
    const codistill::Tensor p = codistill::predict(model->net, batch).ensemble;
    std::memcpy(scores, p.data().data(), p.size() * sizeof(double));
    return CD_OK;
  });
}

void cd_model_free(cd_model* model) { delete model; }

cd_status cd_mean_uncertainty(const double* runs, size_t count, double* mean,
                              double* uncertainty) {
  CD_REQUIRE(runs);
  CD_REQUIRE(mean);
  CD_REQUIRE(uncertainty);
  return guarded([&] {
    const auto agg = codistill::mean_uncertainty(std::vector<double>(runs, runs + count));
    *mean = agg.mean;
    *uncertainty = agg.uncertainty;
    return CD_OK;
  });
}

cd_status cd_equivalence_max_diff(size_t branches, size_t trials, uint64_t seed,
                                  double* max_diff) {
  CD_REQUIRE(max_diff);
  return guarded([&] {
    *max_diff = codistill::verify_equivalence(branches, trials, seed);
    return CD_OK;
  });
}

}  // extern "C"
