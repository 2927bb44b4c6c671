// Copyright 2026 The kvcompress Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// kvc_sim: run a synthetic serving workload, or sweep compression rates.
//
//   kvc_sim run --rate 4 --policy default --out report.json
//   kvc_sim sweep --rates 1,2,4,8 --out sweep.csv
//   kvc_sim --config sim.toml sweep
//
// Config files hold the same keys as the long flags, either as key = value
// lines or as a flat JSON object. Command-line flags win over the file.

#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvc/error.hpp"
#include "kvc/workload.hpp"

namespace {

// Accepts a flat JSON object or falls back to TOML/INI.
class ConfigJsonOrToml : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const std::string text(std::istreambuf_iterator<char>(input), {});
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream again(text);
      return CLI::ConfigTOML::from_config(again);
    }
    const nlohmann::json doc = nlohmann::json::parse(text);
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      CLI::ConfigItem item;
      item.name = key;
      for (char& c : item.name) {
        if (c == '_') c = '-';
      }
      if (value.is_string()) {
        item.inputs = {value.get<std::string>()};
      } else if (value.is_boolean()) {
        item.inputs = {value.get<bool>() ? "true" : "false"};
      } else if (value.is_number()) {
        item.inputs = {value.dump()};
      } else {
        throw kvc::Error(kvc::ErrorCode::kConfig,
                         "config values must be scalars", item.name);
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

void print_error(std::string_view code, std::string_view message,
                 std::string_view field) {
  nlohmann::ordered_json err = {
      {"error",
       {{"code", code}, {"message", message},
        {"field", field.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(field)}}}};
  std::cerr << err.dump() << "\n";
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) {
    throw kvc::Error(kvc::ErrorCode::kConfig, "cannot write '" + path + "'", "out");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paged KV cache compression simulator"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<ConfigJsonOrToml>());
  app.set_config("--config", "", "Config file (key = value or JSON)");

  kvc::WorkloadConfig cfg;
  std::string prompt_len = cfg.prompt.str();
  int max_cache = 0;
  std::int64_t kv_limit = 0;
  std::string out_path;
  std::string metric_mode = "window";
  std::string aggregation = "l2";
  std::string budget_mode = "min";
  std::string exec = "parallel";
  bool no_protect = false;

  app.option_defaults()->always_capture_default();
  app.add_option("--seed", cfg.seed, "Workload and activation seed");
  app.add_option("--layers", cfg.model.layers, "Transformer layers");
  app.add_option("--query-heads", cfg.model.query_heads, "Query heads per layer");
  app.add_option("--kv-heads", cfg.model.kv_heads, "KV heads per layer");
  app.add_option("--head-dim", cfg.model.head_dim, "Head dimension");
  app.add_option("--block-size", cfg.block_size, "Tokens per block");
  app.add_option("--num-blocks", cfg.num_blocks, "Physical blocks in the cache");
  app.add_option("--prompt-len", prompt_len, "Prompt length, fixed or lo:hi");
  app.add_option("--requests", cfg.requests, "Number of requests");
  app.add_option("--output-tokens", cfg.output_tokens, "Tokens generated per request");
  app.add_option("--rate", cfg.rate, "Compression rate (1 disables compression)");
  app.add_option("--max-cache", max_cache,
                 "Fixed per-sequence cache size in tokens (overrides --rate)");
  app.add_option("--budget-mode", budget_mode, "Rate budget: min or max against the floor")
      ->check(CLI::IsMember({"min", "max"}));
  app.add_option("--policy", cfg.policy,
                 "default, prefill, preempt, continual, none, interval:<c>, "
                 "threshold:<n>");
  app.add_option("--kv-limit", kv_limit,
                 "KV pairs per compression round (0 = unlimited)");
  app.add_option("--metric-mode", metric_mode, "window or full")
      ->check(CLI::IsMember({"window", "full"}));
  app.add_option("--aggregation", aggregation, "l1 or l2")
      ->check(CLI::IsMember({"l1", "l2"}));
  app.add_option("--window", cfg.metric.window, "Observation window (queries)");
  app.add_option("--pool", cfg.metric.pool, "Max-pool width over keys");
  app.add_option("--excluded-window", cfg.metric.excluded_window,
                 "Recent queries skipped by full-mode metrics");
  app.add_flag("--no-protect-window", no_protect,
               "Allow eviction of keys inside the observation window");
  app.add_option("--max-steps", cfg.max_steps, "Abort after this many steps");
  app.add_option("--exec", exec, "Kernel execution: serial or parallel")
      ->check(CLI::IsMember({"serial", "parallel"}));
  app.add_option("--out", out_path, "Output file (default stdout)");

  std::string steps_path;
  bool with_steps = false;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one workload and print a JSON report");
  run_cmd->fallthrough();
  run_cmd->add_option("--csv", steps_path, "Also write per-step metrics as CSV");
  run_cmd->add_flag("--steps", with_steps, "Include per-step records in the JSON");

  std::string rates = "1,2,4,8";
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "Run the workload at several rates and print CSV");
  sweep_cmd->fallthrough();
  sweep_cmd->add_option("--rates", rates, "Comma-separated compression rates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what(), "");
    return 2;
  } catch (const nlohmann::json::exception& e) {
    print_error("config", std::string("bad config file: ") + e.what(), "config");
    return 2;
  } catch (const kvc::Error& e) {
    print_error(kvc::to_string(e.code()), e.what(), e.field());
    return 2;
  }

  try {
    cfg.prompt = kvc::PromptLengths::parse(prompt_len);
    if (app.count("--max-cache") > 0) cfg.max_cache = max_cache;
    if (kv_limit > 0) cfg.kv_limit = kv_limit;
    cfg.metric.mode = metric_mode == "full" ? kvc::MetricMode::kFull
                                            : kvc::MetricMode::kWindow;
    cfg.metric.aggregation =
        aggregation == "l1" ? kvc::Aggregation::kL1 : kvc::Aggregation::kL2;
    cfg.metric.protect_window = !no_protect;
    cfg.budget_mode = budget_mode == "max" ? kvc::BudgetMode::kMax : kvc::BudgetMode::kMin;
    cfg.exec = exec == "serial" ? kvc::Exec::kSerial : kvc::Exec::kParallel;
    cfg.validate();

    if (run_cmd->parsed()) {
      const kvc::RunReport report = kvc::run(cfg);
      if (!steps_path.empty()) write_output(steps_path, kvc::steps_csv(report));
      write_output(out_path, kvc::report_json(report, with_steps));
    } else {
      const std::vector<double> list = kvc::parse_rates(rates);
      write_output(out_path, kvc::sweep_csv(kvc::sweep(cfg, list, cfg.exec)));
    }
  } catch (const kvc::Error& e) {
    print_error(kvc::to_string(e.code()), e.what(), e.field());
    return 1;
  }
  return 0;
}
