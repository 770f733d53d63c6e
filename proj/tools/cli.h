/*
 * Copyright 2026 The Marktrace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MARKTRACE_TOOLS_CLI_H_
#define MARKTRACE_TOOLS_CLI_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "marktrace/commands.h"

namespace marktrace::cli {

namespace internal {

// Binds JSON config keys to option targets. A value from the config file is
// applied only when the flag was not given on the command line.
class ConfigBinder {
 public:
  explicit ConfigBinder(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* Add(const std::string& flag, T& target, const std::string& help) {
    CLI::Option* opt = app_->add_option(flag, target, help);
    Bind(flag, opt, target);
    return opt;
  }

  template <typename T>
  void Bind(const std::string& flag, CLI::Option* opt, T& target) {
    const std::string key = flag.substr(2);
    appliers_.push_back([opt, key, &target](const nlohmann::json& cfg) {
      if (opt->count() > 0) return;
      std::string underscored = key;
      for (char& c : underscored) c = c == '-' ? '_' : c;
      for (const std::string& k : {key, underscored}) {
        if (cfg.contains(k) && !cfg.at(k).is_null()) {
          if constexpr (std::is_same_v<T, std::filesystem::path>) {
            target = cfg.at(k).get<std::string>();
          } else {
            target = cfg.at(k).get<T>();
          }
          return;
        }
      }
    });
  }

  void Apply(const nlohmann::json& cfg) const {
    for (const auto& apply : appliers_) apply(cfg);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(const nlohmann::json&)>> appliers_;
};

}  // namespace internal

// Parses argv and runs one subcommand. Returns the process exit code.
inline int RunCli(int argc, const char* const* argv, std::ostream& out,
                  std::ostream& err) {
  CLI::App app{"marktrace: mark image data and audit models for its use"};
  app.require_subcommand(1);

  // gen-ood
  CLI::App* gen = app.add_subcommand("gen-ood", "Generate a random stripe OOD feature");
  commands::GenOodOptions gen_opts;
  std::string gen_pattern_out;
  std::string gen_config;
  internal::ConfigBinder gen_bind(gen);
  gen_bind.Add("--seed", gen_opts.seed, "PRNG seed");
  gen_bind.Add("--height", gen_opts.height, "Image height in pixels");
  gen_bind.Add("--width", gen_opts.width, "Image width in pixels (>= 16)");
  gen_bind.Add("--out", gen_opts.out, "Output PNG path");
  gen_bind.Add("--pattern-out", gen_pattern_out, "Pattern JSON path");
  gen->add_option("--config", gen_config, "JSON config file; flags override it");

  // mark
  CLI::App* mark = app.add_subcommand("mark", "Mark every image in a directory");
  commands::MarkOptions mark_opts;
  std::string mark_spec;
  std::string mark_ablation = "full";
  std::string mark_config;
  internal::ConfigBinder mark_bind(mark);
  mark_bind.Add("--in-dir", mark_opts.in_dir, "Directory of PNG/PPM inputs");
  mark_bind.Add("--out-dir", mark_opts.out_dir, "Output directory");
  mark_bind.Add("--spec", mark_spec, "MarkSpec JSON (or an earlier manifest)");
  mark_bind.Add("--ablation", mark_ablation, "full|blend-only|noise-only|none");
  mark_bind.Add("--threads", mark_opts.threads, "Worker threads");
  mark->add_option("--config", mark_config, "JSON config file; flags override it");

  // audit
  CLI::App* audit = app.add_subcommand("audit", "Audit loss records for membership");
  commands::AuditOptions audit_opts;
  std::string audit_mode = "set";
  std::string audit_loss = "cross-entropy";
  std::string audit_histogram;
  std::string audit_config;
  internal::ConfigBinder audit_bind(audit);
  audit_bind.Add("--records", audit_opts.records, "Loss records (JSONL)");
  audit_bind.Add("--alpha", audit_opts.alpha, "Target false positive rate");
  audit_bind.Add("--mode", audit_mode, "set|instance");
  audit_bind.Add("--loss", audit_loss, "cross-entropy|label-only");
  audit_bind.Add("--report", audit_opts.report, "Report JSON path");
  audit_bind.Add("--histogram", audit_histogram, "Optional CSV of logit-scaled losses");
  audit->add_option("--config", audit_config, "JSON config file; flags override it");

  // simulate
  CLI::App* sim = app.add_subcommand("simulate", "Run a lab scenario end to end");
  commands::SimulateOptions sim_opts;
  std::string sim_scenario;
  bool sim_no_images = false;
  std::string sim_config;
  internal::ConfigBinder sim_bind(sim);
  sim_bind.Add("--scenario", sim_scenario, "Scenario JSON (defaults when omitted)");
  sim_bind.Add("--seed", sim_opts.seed, "Scenario seed");
  sim_bind.Add("--out-dir", sim_opts.out_dir, "Run directory");
  CLI::Option* no_images = sim->add_flag("--no-images", sim_no_images,
                                         "Skip writing marked images");
  sim_bind.Bind("--no-images", no_images, sim_no_images);
  sim->add_option("--config", sim_config, "JSON config file; flags override it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << '\n';
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  auto apply_config = [&](const std::string& path,
                          const internal::ConfigBinder& binder) -> absl::Status {
    if (path.empty()) return absl::OkStatus();
    absl::StatusOr<nlohmann::json> cfg = commands::ReadJsonFile(path);
    if (!cfg.ok()) return cfg.status();
    if (!cfg->is_object()) return absl::InvalidArgumentError("config must be a JSON object");
    try {
      binder.Apply(*cfg);
    } catch (const nlohmann::json::exception& e) {
      return absl::InvalidArgumentError(absl::StrCat("config ", path, ": ", e.what()));
    }
    return absl::OkStatus();
  };

  absl::Status status;
  if (gen->parsed()) {
    status = apply_config(gen_config, gen_bind);
    if (status.ok()) {
      if (!gen_pattern_out.empty()) gen_opts.pattern_out = gen_pattern_out;
      status = commands::GenOod(gen_opts, out);
    }
  } else if (mark->parsed()) {
    status = apply_config(mark_config, mark_bind);
    if (status.ok()) {
      if (!mark_spec.empty()) mark_opts.spec = mark_spec;
      absl::StatusOr<Ablation> ablation = ParseAblation(mark_ablation);
      status = ablation.status();
      if (status.ok()) {
        mark_opts.ablation = *ablation;
        status = commands::MarkDirectory(mark_opts, out);
      }
    }
  } else if (audit->parsed()) {
    status = apply_config(audit_config, audit_bind);
    if (status.ok()) {
      absl::StatusOr<AuditMode> mode = ParseAuditMode(audit_mode);
      absl::StatusOr<LossMode> loss = ParseLossMode(audit_loss);
      if (!mode.ok()) {
        status = mode.status();
      } else if (!loss.ok()) {
        status = loss.status();
      } else {
        audit_opts.mode = *mode;
        audit_opts.loss = *loss;
        if (!audit_histogram.empty()) audit_opts.histogram = audit_histogram;
        status = commands::Audit(audit_opts, out);
      }
    }
  } else if (sim->parsed()) {
    status = apply_config(sim_config, sim_bind);
    if (status.ok()) {
      if (!sim_scenario.empty()) sim_opts.scenario = sim_scenario;
      sim_opts.write_images = !sim_no_images;
      status = commands::Simulate(sim_opts, out);
    }
  }
  if (!status.ok()) err << "error: " << status.message() << '\n';
  return commands::ExitCodeFor(status);
}

}  // namespace marktrace::cli

#endif  // MARKTRACE_TOOLS_CLI_H_
