// Copyright (c) 2026 MSDiff Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/common.hpp"
#include "msdiff/diffuse.hpp"
#include "msdiff/embed.hpp"
#include "msdiff/hsi.hpp"

// Run configuration (key=value file shared by every pipeline stage) and the
// manifest written next to every produced artifact.
namespace msdiff::config {

struct RunConfig {
  std::int64_t patch_size = 9;
  std::int64_t stride = 3;
  std::int64_t embed_dim = 64;
  std::int64_t rank = 8;
  std::int64_t layers = 2;
  std::int64_t heads = 4;
  std::int64_t ffn_mult = 4;
  double lambda_cls = 0.1;
  double lambda_x = 1.0;
  double t_star = 0.25;
  std::int64_t time_freqs = 16;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t epochs = 20;
  std::uint64_t seed = 1;
  double train_fraction = 0.1;
  double val_fraction = 0.1;
  double test_fraction = 0.8;

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ValidationError("config line " + std::to_string(line_no) +
                              ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!cfg.set(key, value)) {
        throw ValidationError("config line " + std::to_string(line_no) +
                              ": unknown key '" + key + "'");
      }
    }
    return cfg;
  }

  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool set(const std::string& key, const std::string& value) {
    auto as_i64 = [&] { return static_cast<std::int64_t>(std::stoll(value)); };
    auto as_f64 = [&] { return std::stod(value); };
    if (key == "patch_size") patch_size = as_i64();
    else if (key == "stride") stride = as_i64();
    else if (key == "embed_dim") embed_dim = as_i64();
    else if (key == "rank") rank = as_i64();
    else if (key == "layers") layers = as_i64();
    else if (key == "heads") heads = as_i64();
    else if (key == "ffn_mult") ffn_mult = as_i64();
    else if (key == "lambda_cls") lambda_cls = as_f64();
    else if (key == "lambda_x") lambda_x = as_f64();
    else if (key == "t_star") t_star = as_f64();
    else if (key == "time_freqs") time_freqs = as_i64();
    else if (key == "lr") lr = as_f64();
    else if (key == "weight_decay") weight_decay = as_f64();
    else if (key == "epochs") epochs = as_i64();
    else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "train_fraction") train_fraction = as_f64();
    else if (key == "val_fraction") val_fraction = as_f64();
    else if (key == "test_fraction") test_fraction = as_f64();
    else return false;
    return true;
  }

  std::string serialize() const {
    std::ostringstream out;
    char buf[64];
    auto put_f = [&](const char* key, double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << key << "=" << buf << "\n";
    };
    out << "patch_size=" << patch_size << "\n";
    out << "stride=" << stride << "\n";
    out << "embed_dim=" << embed_dim << "\n";
    out << "rank=" << rank << "\n";
    out << "layers=" << layers << "\n";
    out << "heads=" << heads << "\n";
    out << "ffn_mult=" << ffn_mult << "\n";
    put_f("lambda_cls", lambda_cls);
    put_f("lambda_x", lambda_x);
    put_f("t_star", t_star);
    out << "time_freqs=" << time_freqs << "\n";
    put_f("lr", lr);
    put_f("weight_decay", weight_decay);
    out << "epochs=" << epochs << "\n";
    out << "seed=" << seed << "\n";
    put_f("train_fraction", train_fraction);
    put_f("val_fraction", val_fraction);
    put_f("test_fraction", test_fraction);
    return out.str();
  }

  embed::EmbedConfig embed_config(std::int64_t bands, std::int64_t n_classes) const {
    embed::EmbedConfig cfg;
    cfg.patch_size = patch_size;
    cfg.stride = stride;
    cfg.embed_dim = embed_dim;
    cfg.bottleneck_rank = rank;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.ffn_mult = ffn_mult;
    cfg.lambda_cls = lambda_cls;
    cfg.n_classes = n_classes;
    cfg.bands = bands;
    return cfg;
  }

  diffuse::DiffusionConfig diffusion_config() const {
    diffuse::DiffusionConfig cfg;
    cfg.latent_dim = embed_dim;
    cfg.n_freqs = time_freqs;
    cfg.lambda_x = lambda_x;
    return cfg;
  }

  hsi::SplitSpec split_spec() const {
    hsi::SplitSpec spec;
    spec.train_fraction = train_fraction;
    spec.val_fraction = val_fraction;
    spec.test_fraction = test_fraction;
    spec.seed = seed;
    return spec;
  }
};

// --------------------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::string config_snapshot;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, digest
  std::vector<std::pair<std::string, std::string>> outputs;  // path, digest
  double wall_seconds = 0.0;

  void add_input(const std::string& path) {
    inputs.emplace_back(path, hex64(file_digest(path)));
  }
  void add_output(const std::string& path) {
    outputs.emplace_back(path, hex64(file_digest(path)));
  }

  std::string serialize() const {
    std::ostringstream out;
    out << "command=" << command << "\n";
    out << "seed=" << seed << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", wall_seconds);
    out << "wall_seconds=" << buf << "\n";
    for (const auto& [path, digest] : inputs) {
      out << "input=" << path << " digest=" << digest << "\n";
    }
    for (const auto& [path, digest] : outputs) {
      out << "output=" << path << " digest=" << digest << "\n";
    }
    out << "[config]\n" << config_snapshot;
    return out.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest " + path);
    out << serialize();
  }
};

}  // namespace msdiff::config
