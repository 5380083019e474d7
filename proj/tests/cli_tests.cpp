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

#define CATCH_CONFIG_MAIN
#include <catch2/catch.hpp>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MSDIFF_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buffer{};
  CommandResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buffer.data(), static_cast<int>(buffer.size()), pipe) != nullptr) {
    result.output += buffer.data();
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("msdiff_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::ofstream cfg(dir / "run.cfg");
    cfg << "patch_size=5\nstride=5\nembed_dim=16\nrank=4\nlayers=1\nheads=2\n"
           "epochs=4\nseed=7\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("cli runs the full staged pipeline") {
  Workspace ws;
  const std::string cfg = " --config " + ws.path("run.cfg");

  auto synth = run_cli("synth --out " + ws.path("cube.hsc") +
                       " --height 28 --width 28 --bands 8 --classes 3 --seed 7");
  REQUIRE(synth.exit_code == 0);
  REQUIRE(fs::exists(ws.path("cube.hsc")));
  REQUIRE(fs::exists(ws.path("cube.hsc.manifest")));

  auto te = run_cli("train-embed --data " + ws.path("cube.hsc") + cfg + " --out " +
                    ws.path("embed.ckpt"));
  REQUIRE(te.exit_code == 0);
  REQUIRE(te.output.find("epoch=4") != std::string::npos);

  auto ex = run_cli("extract-latents --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                    ws.path("embed.ckpt") + cfg + " --out " + ws.path("latents.bin"));
  REQUIRE(ex.exit_code == 0);

  auto td = run_cli("train-diffusion --latents " + ws.path("latents.bin") +
                    " --ckpt-embed " + ws.path("embed.ckpt") + cfg + " --out " +
                    ws.path("diff.ckpt"));
  REQUIRE(td.exit_code == 0);

  auto tc = run_cli("train-classifier --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                    ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") + cfg +
                    " --out " + ws.path("cls.ckpt"));
  REQUIRE(tc.exit_code == 0);

  auto ev = run_cli("evaluate --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                    ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") +
                    " --ckpt-cls " + ws.path("cls.ckpt") + cfg);
  REQUIRE(ev.exit_code == 0);
  REQUIRE(ev.output.find("case=none oa=") != std::string::npos);
  REQUIRE(ev.output.find("kappa=") != std::string::npos);

  SECTION("evaluation is identical across repeated runs") {
    auto again = run_cli("evaluate --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                         ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") +
                         " --ckpt-cls " + ws.path("cls.ckpt") + cfg);
    REQUIRE(again.output == ev.output);
  }

  SECTION("benchmark evaluation and confusion dump") {
    auto bench = run_cli("evaluate --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                         ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") +
                         " --ckpt-cls " + ws.path("cls.ckpt") + cfg +
                         " --case C-9 --dump-cm " + ws.path("cm.csv"));
    REQUIRE(bench.exit_code == 0);
    REQUIRE(bench.output.find("case=C-9 oa=") != std::string::npos);
    REQUIRE(fs::exists(ws.path("cm.csv")));

    auto bad = run_cli("evaluate --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                       ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") +
                       " --ckpt-cls " + ws.path("cls.ckpt") + cfg + " --case C-11");
    REQUIRE(bad.exit_code != 0);
    REQUIRE(bad.output.find("error:") != std::string::npos);
  }

  SECTION("id table covers every case and stage") {
    auto id = run_cli("id --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                      ws.path("embed.ckpt") + " --ckpt-diff " + ws.path("diff.ckpt") + cfg +
                      " --cases C-3-3,C-9 --n 80");
    REQUIRE(id.exit_code == 0);
    REQUIRE(id.output.find("case,stage,id") != std::string::npos);
    REQUIRE(id.output.find("C-3-3,degraded-raw,") != std::string::npos);
    REQUIRE(id.output.find("C-9,diffusion-refined,") != std::string::npos);
  }

  SECTION("export writes the embeddings csv") {
    auto xp = run_cli("export --latents " + ws.path("latents.bin") + " --out " +
                      ws.path("emb.csv"));
    REQUIRE(xp.exit_code == 0);
    std::ifstream in(ws.path("emb.csv"));
    std::string header;
    std::getline(in, header);
    REQUIRE(header.rfind("label,f0,", 0) == 0);
  }

  SECTION("degrade command with stats") {
    auto dg = run_cli("degrade --in " + ws.path("cube.hsc") + " --out " +
                      ws.path("cube_c9.hsc") + " --case C-9 --seed 5 --stats");
    REQUIRE(dg.exit_code == 0);
    REQUIRE(dg.output.find("band=0 mse=") != std::string::npos);
    REQUIRE(dg.output.find("corrupted_fraction=") != std::string::npos);
    REQUIRE(fs::exists(ws.path("cube_c9.hsc")));

    auto dg2 = run_cli("degrade --in " + ws.path("cube.hsc") + " --out " +
                       ws.path("cube_w.hsc") +
                       " --weights 0.2,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1 --rho 0.5 --seed 5");
    REQUIRE(dg2.exit_code == 0);
  }
}

TEST_CASE("cli enforces the stage order") {
  Workspace ws;
  const std::string cfg = " --config " + ws.path("run.cfg");
  auto synth = run_cli("synth --out " + ws.path("cube.hsc") +
                       " --height 20 --width 20 --bands 8 --classes 3 --seed 3");
  REQUIRE(synth.exit_code == 0);

  auto td = run_cli("train-diffusion --latents " + ws.path("nope.bin") + " --ckpt-embed " +
                    ws.path("nope.ckpt") + cfg + " --out " + ws.path("diff.ckpt"));
  REQUIRE(td.exit_code == 2);
  REQUIRE(td.output.find("error: stage-order:") != std::string::npos);
  REQUIRE(td.output.find("train-embed") != std::string::npos);

  auto tc = run_cli("train-classifier --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                    ws.path("nope.ckpt") + cfg + " --out " + ws.path("cls.ckpt"));
  REQUIRE(tc.exit_code == 2);
  REQUIRE(tc.output.find("error: stage-order:") != std::string::npos);
}

TEST_CASE("cli rejects unknown flags and offers help everywhere") {
  auto bad = run_cli("synth --out x.hsc --bogus-flag 3");
  REQUIRE(bad.exit_code != 0);

  for (const std::string sub :
       {"synth", "degrade", "train-embed", "extract-latents", "train-diffusion",
        "train-classifier", "evaluate", "id", "export"}) {
    auto help = run_cli(sub + " --help");
    REQUIRE(help.exit_code == 0);
    REQUIRE(help.output.find("--help") != std::string::npos);
  }
}

TEST_CASE("cli pipeline is reproducible end to end") {
  Workspace ws;
  const std::string cfg = " --config " + ws.path("run.cfg");
  run_cli("synth --out " + ws.path("cube.hsc") +
          " --height 24 --width 24 --bands 8 --classes 3 --seed 9");

  auto run_chain = [&](const std::string& tag) {
    run_cli("train-embed --data " + ws.path("cube.hsc") + cfg + " --out " +
            ws.path("embed_" + tag + ".ckpt"));
    run_cli("extract-latents --data " + ws.path("cube.hsc") + " --ckpt-embed " +
            ws.path("embed_" + tag + ".ckpt") + cfg + " --out " +
            ws.path("lat_" + tag + ".bin"));
    run_cli("train-diffusion --latents " + ws.path("lat_" + tag + ".bin") +
            " --ckpt-embed " + ws.path("embed_" + tag + ".ckpt") + cfg + " --out " +
            ws.path("diff_" + tag + ".ckpt"));
    run_cli("train-classifier --data " + ws.path("cube.hsc") + " --ckpt-embed " +
            ws.path("embed_" + tag + ".ckpt") + " --ckpt-diff " +
            ws.path("diff_" + tag + ".ckpt") + cfg + " --out " +
            ws.path("cls_" + tag + ".ckpt"));
    return run_cli("evaluate --data " + ws.path("cube.hsc") + " --ckpt-embed " +
                   ws.path("embed_" + tag + ".ckpt") + " --ckpt-diff " +
                   ws.path("diff_" + tag + ".ckpt") + " --ckpt-cls " +
                   ws.path("cls_" + tag + ".ckpt") + cfg + " --case C-3-2");
  };

  auto first = run_chain("a");
  auto second = run_chain("b");
  REQUIRE(first.exit_code == 0);
  REQUIRE(first.output == second.output);

  // Identical artifacts bit for bit.
  auto digest = [&](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return std::hash<std::string>{}(bytes);
  };
  REQUIRE(digest(ws.path("embed_a.ckpt")) == digest(ws.path("embed_b.ckpt")));
  REQUIRE(digest(ws.path("diff_a.ckpt")) == digest(ws.path("diff_b.ckpt")));
  REQUIRE(digest(ws.path("cls_a.ckpt")) == digest(ws.path("cls_b.ckpt")));
}
