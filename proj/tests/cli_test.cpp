#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "tinysense/cli/cli.hpp"
#include "tinysense/cli/config.hpp"
#include "tinysense/codec/codec.hpp"
#include "tinysense/data/csi.hpp"
#include "tinysense/models/model.hpp"

namespace fs = std::filesystem;
using namespace tinysense;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "tinysense");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// value of "key=value" in a report
double field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return std::stod(line.substr(key.size() + 1));
  ADD_FAILURE() << "no " << key << " in\n" << text;
  return 0.0;
}

// Small shapes keep every subcommand under a second.
const std::vector<std::string> kSmall = {"--frames",     "32", "--freq",     "16", "--time",          "16",
                                         "--channels",   "2",  "--embed_dim", "4", "--codebook_size", "8",
                                         "--width",      "4",  "--epochs",   "20", "--batch_size",    "4",
                                         "--chunk_indices", "8", "--pace", "false"};

std::vector<std::string> small(std::vector<std::string> tail) {
  auto v = kSmall;
  v.insert(v.end(), tail.begin(), tail.end());
  return v;
}

class CliFiles : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("tinysense_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(run(small({"gen", "--out", p("d.tsds")})).code, 0);
    ASSERT_EQ(run(small({"train", "--data", p("d.tsds"), "--out", p("m.tsmd")})).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string p(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};
fs::path CliFiles::dir_;

}  // namespace

TEST(Cli, HelpListsEveryConfigKey) {
  const auto r = run({"--help"});
  ASSERT_EQ(r.code, 0);
  for (const auto& k : cli::config_keys()) EXPECT_NE(r.out.find("--" + k.name + " "), std::string::npos) << k.name;
  for (const char* sub : {"gen", "train", "train-recovery", "resize-codebook", "compress", "decompress", "edge", "serve",
                          "proxy", "eval", "bench", "dump-embeddings"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, ConfigDocListsEveryKey) {
  const std::string doc = slurp(fs::path(TS_SOURCE_DIR) / "docs" / "CONFIG.md");
  ASSERT_FALSE(doc.empty());
  for (const auto& k : cli::config_keys()) EXPECT_NE(doc.find("`" + k.name + "`"), std::string::npos) << k.name;
}

TEST(Cli, UnknownOrBadKeysAreUsageErrors) {
  EXPECT_EQ(run({"--no_such_key", "3", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({"--epochs", "-3", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({"--epochs", "3x", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({"--optimizer", "rmsprop", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({"--chunk_indices", "12", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({"--epsilon", "1.5", "--dump-config"}).code, cli::kUsage);
  EXPECT_EQ(run({}).code, cli::kUsage);

  cli::RunConfig c;
  EXPECT_THROW(cli::apply_config_text(c, "no_such_key = 1"), cli::ConfigError);
  EXPECT_THROW(cli::apply_config_text(c, "epochs = 1\nepochs = 2"), cli::ConfigError);
  EXPECT_THROW(cli::apply_config_text(c, "epochs"), cli::ConfigError);
  EXPECT_THROW(cli::apply_config_text(c, "pace = maybe"), cli::ConfigError);
  try {
    cli::apply_config_text(c, "# header\n\nlr = 0.01\nbeta = x", "f.cfg");
    FAIL();
  } catch (const cli::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:4"), std::string::npos) << e.what();
  }
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path cfg = fs::temp_directory_path() / ("tinysense_cfg_" + std::to_string(::getpid()));
  std::ofstream(cfg) << "# run\nepochs = 7\nlr = 0.005\n";
  const auto r = run({"--config", cfg.string(), "--epochs", "9", "--dump-config"});
  fs::remove(cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epochs = 9\n"), std::string::npos);
  EXPECT_NE(r.out.find("lr = 0.005\n"), std::string::npos);
}

TEST(Cli, DumpedConfigReadsBackUnchanged) {
  cli::RunConfig c;
  cli::set_key(c, "tf_lr", "0.0003");
  cli::set_key(c, "noise_std", "0.1");
  cli::set_key(c, "pace", "false");
  const std::string text = cli::dump_config(c);
  cli::RunConfig back;
  cli::apply_config_text(back, text);
  EXPECT_EQ(cli::dump_config(back), text);
  EXPECT_NO_THROW(back.validate());
}

TEST(Cli, MissingFileIsIoError) {
  const auto r = run({"eval", "--model", "/nonexistent/m.tsmd", "--data", "/nonexistent/d.tsds"});
  EXPECT_EQ(r.code, cli::kIo) << r.err;
}

TEST_F(CliFiles, EdgeWithoutServerIsNetworkError) {
  const auto r = run(small({"--connect_attempts", "1", "--retry_delay_ms", "0", "edge", "--model", p("m.tsmd"),
                            "--data", p("d.tsds"), "--connect", "127.0.0.1:1"}));
  EXPECT_EQ(r.code, cli::kNetwork) << r.err;
}

TEST_F(CliFiles, CompressDecompressMatchesServerPath) {
  ASSERT_EQ(run(small({"compress", "--model", p("m.tsmd"), "--data", p("d.tsds"), "--out", p("c.tsvq")})).code, 0);
  ASSERT_EQ(run(small({"decompress", "--model", p("m.tsmd"), "--in", p("c.tsvq"), "--out", p("local.tsds")})).code, 0);

  const std::string port_file = p("port");
  auto server = std::async(std::launch::async, [&] {
    return run(small({"serve", "--model", p("m.tsmd"), "--listen", ":0", "--port-file", port_file, "--data",
                      p("d.tsds"), "--out", p("served.tsds")}));
  });
  std::string port;
  for (int i = 0; i < 500 && port.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    std::ifstream(port_file) >> port;
  }
  ASSERT_FALSE(port.empty());
  const auto edge = run(small({"edge", "--model", p("m.tsmd"), "--data", p("d.tsds"), "--connect", "127.0.0.1:" + port}));
  ASSERT_EQ(edge.code, 0) << edge.err;
  const auto served = server.get();
  ASSERT_EQ(served.code, 0) << served.err;
  EXPECT_EQ(field(served.out, "lost_cells"), 0.0);

  const auto local = data::load_dataset(p("local.tsds"));
  const auto remote = data::load_dataset(p("served.tsds"));
  ASSERT_EQ(local.size(), 8u);
  EXPECT_TRUE(local == remote);
}

TEST_F(CliFiles, ResizedCodebookRecordsItsParent) {
  const auto r = run(small({"resize-codebook", "--model", p("m.tsmd"), "--to", "4", "--out", p("s4.tscb")}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cb = codec::load_codebook(p("s4.tscb"));
  const auto m = models::load_model(p("m.tsmd"));
  EXPECT_EQ(cb.size(), 4u);
  EXPECT_EQ(cb.dim(), 4u);
  ASSERT_TRUE(cb.parent_id().has_value());
  EXPECT_EQ(*cb.parent_id(), m.codebook().id());

  // a stream made with the big book cannot be decoded with the small one
  ASSERT_EQ(run(small({"compress", "--model", p("m.tsmd"), "--data", p("d.tsds"), "--out", p("c8.tsvq")})).code, 0);
  EXPECT_EQ(run(small({"decompress", "--model", p("m.tsmd"), "--codebook", p("s4.tscb"), "--in", p("c8.tsvq"),
                       "--out", p("x.tsds")}))
                .code,
            cli::kIo);
}

TEST_F(CliFiles, EvalDegradesWithEpsilon) {
  auto eval = [&](const char* eps) {
    const auto r = run(small({"--split", "all", "--epsilon", eps, "eval", "--model", p("m.tsmd"), "--data", p("d.tsds")}));
    EXPECT_EQ(r.code, 0) << r.err;
    return field(r.out, "nmse_db");
  };
  const double clean = eval("0"), e1 = eval("0.1"), e3 = eval("0.3");
  EXPECT_LT(clean, e1);
  EXPECT_LT(e1, e3);
  // same config, same numbers
  EXPECT_EQ(e3, eval("0.3"));
}

TEST_F(CliFiles, DumpEmbeddingsIsDeterministic) {
  ASSERT_EQ(run(small({"dump-embeddings", "--model", p("m.tsmd"), "--data", p("d.tsds"), "--out", p("a.csv")})).code, 0);
  ASSERT_EQ(run(small({"dump-embeddings", "--model", p("m.tsmd"), "--data", p("d.tsds"), "--out", p("b.csv")})).code, 0);
  const auto a = slurp(p("a.csv"));
  EXPECT_EQ(a, slurp(p("b.csv")));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 33);
}
