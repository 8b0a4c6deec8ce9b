#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "soundstream/bitstream.hpp"
#include "soundstream/checkpoint.hpp"
#include "soundstream/trainer.hpp"
#include "soundstream/wav.hpp"

namespace ss = soundstream;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = ss::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    EXPECT_NE(eq, std::string::npos) << "not key=value: " << line;
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "soundstream_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "data");

    ss::ModelConfig c;
    c.enc_channels = 4;
    c.dec_channels = 4;
    c.embedding_dim = 8;
    ss::CodecModel m(c, 3);
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0.0f, 0.1f);
    for (int q = 0; q < m.rvq.num_layers(); ++q)
      for (auto& v : m.rvq.layer(q).vectors) v = n(rng);
    m.rvq.set_initialized(true);
    ss::save_checkpoint(m, path("model.ssck"));

    c.denoise = true;
    ss::CodecModel d(c, 4);
    for (int q = 0; q < d.rvq.num_layers(); ++q) d.rvq.layer(q).vectors = m.rvq.layer(q).vectors;
    d.rvq.set_initialized(true);
    ss::save_checkpoint(d, path("denoise.ssck"));

    const auto clips = ss::synthetic_clips(3, 24000, 24000, 11);
    ss::write_wav(path("one_second.wav"), clips[0], 24000);
    ss::write_wav(path("short.wav"), std::vector<float>(clips[1].begin(), clips[1].begin() + 1000), 24000);
    ss::write_wav(path("48k.wav"), clips[2], 48000);
    for (int i = 0; i < 2; ++i) ss::write_wav(path("data/clip" + std::to_string(i) + ".wav"), clips[i], 24000);

    // Stereo file written by hand.
    std::vector<std::uint8_t> stereo = ss::encode_wav(std::vector<float>(8, 0.0f), 24000);
    stereo[22] = 2;
    ss::write_file(path("stereo.wav"), stereo);

    std::ofstream(path("toy.cfg")) << "# tiny reconstruction-only run\n"
                                      "seed = 5\n"
                                      "batch_size = 2\n"
                                      "crop_seconds = 0.16\n"
                                      "steps = 3\n"
                                      "lr_g = 0.001\n"
                                      "lambda_adv = 0\n"
                                      "lambda_feat = 0\n"
                                      "log_every = 1\n"
                                      "enc_channels = 4\n"
                                      "dec_channels = 4\n"
                                      "embedding_dim = 8\n"
                                      "num_quantizers = 4\n"
                                      "codebook_size = 16\n";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, EncodePrintsNominalBitrate) {
  const auto r = run({"encode", "--model", path("model.ssck"), "--in", path("one_second.wav"), "--out",
                      path("a.ssbc"), "--nq", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "6000 bps\n");
  const auto s = ss::EncodedStream::from_bytes(ss::read_file(path("a.ssbc")));
  EXPECT_EQ(s.header.frame_count, 75u);
  EXPECT_EQ(s.payload.size(), 750u);

  const auto r4 = run({"encode", "--model", path("model.ssck"), "--in", path("one_second.wav"), "--out",
                       path("b.ssbc"), "--nq", "4"});
  EXPECT_EQ(r4.out, "3000 bps\n");
}

TEST_F(Cli, EncodeErrors) {
  const std::vector<std::string> base{"encode", "--model", path("model.ssck"), "--out", path("x.ssbc")};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  auto r = with({"--in", path("one_second.wav"), "--nq", "0"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  EXPECT_NE(r.err.find("usage error"), std::string::npos);

  r = with({"--in", path("one_second.wav"), "--nq", "9"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--nq 9 outside [1, 8]"), std::string::npos) << r.err;

  r = with({"--in", path("48k.wav")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  EXPECT_NE(r.err.find("sample rate 48000 Hz"), std::string::npos) << r.err;

  r = with({"--in", path("stereo.wav")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("expected mono audio, got 2 channels"), std::string::npos) << r.err;

  r = run({"encode", "--model", path("one_second.wav"), "--in", path("one_second.wav"), "--out", path("x.ssbc")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad magic"), std::string::npos) << r.err;

  r = with({"--in", path("missing.wav")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
}

TEST_F(Cli, RoundTripKeepsPaddedLength) {
  ASSERT_EQ(run({"encode", "--model", path("model.ssck"), "--in", path("short.wav"), "--out", path("s.ssbc")}).code,
            0);
  const auto r = run({"decode", "--model", path("model.ssck"), "--in", path("s.ssbc"), "--out", path("s.wav")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto wav = ss::read_wav(path("s.wav"));
  EXPECT_EQ(wav.sample_rate, 24000);
  EXPECT_EQ(wav.samples.size(), 1280u);  // 1000 samples padded to 4 frames of 320
  EXPECT_EQ(r.out, "samples=1280\n");
}

TEST_F(Cli, DecodeFewerLayersThanEncoded) {
  ASSERT_EQ(run({"encode", "--model", path("model.ssck"), "--in", path("one_second.wav"), "--out", path("f.ssbc")})
                .code,
            0);
  const auto r = run({"decode", "--model", path("model.ssck"), "--in", path("f.ssbc"), "--out", path("f2.wav"),
                      "--nq", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto wav = ss::read_wav(path("f2.wav"));
  EXPECT_EQ(wav.samples.size(), 24000u);
  for (float v : wav.samples) ASSERT_TRUE(std::isfinite(v));

  // Matches decoding the prefix columns directly.
  const auto ck = ss::load_checkpoint(path("model.ssck"));
  const auto indices = ss::unpack(ss::EncodedStream::from_bytes(ss::read_file(path("f.ssbc"))));
  const auto direct = ck.model.decompress(indices.prefix(2));
  for (std::size_t i = 0; i < direct.size(); ++i)
    ASSERT_EQ(ss::float_to_pcm(direct[i]), ss::float_to_pcm(wav.samples[i])) << i;

  const auto bad = run({"decode", "--model", path("model.ssck"), "--in", path("f.ssbc"), "--out", path("f3.wav"),
                        "--nq", "9"});
  EXPECT_EQ(bad.code, 2);
}

TEST_F(Cli, DecodeErrors) {
  ASSERT_EQ(run({"encode", "--model", path("model.ssck"), "--in", path("short.wav"), "--out", path("d.ssbc")}).code,
            0);
  auto r = run({"decode", "--model", path("model.ssck"), "--in", path("d.ssbc"), "--out", path("d.wav"),
                "--denoise", "on"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  EXPECT_NE(r.err.find("denoise"), std::string::npos);

  r = run({"decode", "--model", path("model.ssck"), "--in", path("d.ssbc"), "--out", path("d.wav"), "--denoise",
           "maybe"});
  EXPECT_EQ(r.code, 2);

  // A stream written for another configuration.
  ss::ModelConfig other;
  other.num_quantizers = 16;
  other.codebook_size = 32;
  ss::write_file(path("other.ssbc"), ss::pack(ss::IndexMatrix(2, 16), other).to_bytes());
  r = run({"decode", "--model", path("model.ssck"), "--in", path("other.ssbc"), "--out", path("d.wav")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("does not match the model"), std::string::npos) << r.err;

  auto bytes = ss::read_file(path("d.ssbc"));
  bytes.pop_back();
  ss::write_file(path("cut.ssbc"), bytes);
  r = run({"decode", "--model", path("model.ssck"), "--in", path("cut.ssbc"), "--out", path("d.wav")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("truncated"), std::string::npos) << r.err;
}

TEST_F(Cli, DenoiseFlagOnConditionedModel) {
  const auto e = run({"encode", "--model", path("denoise.ssck"), "--in", path("short.wav"), "--out", path("n.ssbc"),
                      "--denoise", "on"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto r = run({"decode", "--model", path("denoise.ssck"), "--in", path("n.ssbc"), "--out", path("n.wav"),
                      "--denoise", "on"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, EvalIdentityPathHasZeroLoss) {
  const auto r = run({"eval", "--model", path("model.ssck"), "--in", path("one_second.wav"), "--ref",
                      path("one_second.wav")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("l_rec"), "0");
  EXPECT_EQ(kv.at("frames"), "75");
}

TEST_F(Cli, EvalOutputKeys) {
  const auto r = run({"eval", "--model", path("model.ssck"), "--in", path("one_second.wav"), "--ref",
                      path("one_second.wav"), "--nq", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> keys;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) keys.push_back(line.substr(0, line.find('=')));
  const std::vector<std::string> expected{"l_rec",
                                          "frames",
                                          "n_q",
                                          "nominal_bits_per_frame",
                                          "nominal_bps",
                                          "entropy_layer_1",
                                          "entropy_layer_2",
                                          "entropy_layer_3",
                                          "entropy_bits_per_frame",
                                          "entropy_bps",
                                          "cross_entropy_bits_per_frame",
                                          "cross_entropy_bps"};
  EXPECT_EQ(keys, expected);
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("nominal_bps"), "2250");
  EXPECT_LE(std::stod(kv.at("entropy_bits_per_frame")), 30.0);
  EXPECT_GE(std::stod(kv.at("cross_entropy_bits_per_frame")), std::stod(kv.at("entropy_bits_per_frame")) - 1e-9);
}

TEST_F(Cli, EvalUniformIndicesReachNominalRate) {
  // Every codeword used equally often in every layer.
  ss::ModelConfig c;
  c.enc_channels = 4;
  c.dec_channels = 4;
  c.embedding_dim = 8;
  ss::IndexMatrix m(2048, 8);
  for (std::int64_t f = 0; f < m.frames; ++f)
    for (int q = 0; q < 8; ++q) m.at(f, q) = static_cast<int>((f * (2 * q + 1)) % 1024);
  ss::write_file(path("uniform.ssbc"), ss::pack(m, c).to_bytes());
  const auto r = run({"eval", "--model", path("model.ssck"), "--in", path("uniform.ssbc")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.count("l_rec"), 0u);
  EXPECT_NEAR(std::stod(kv.at("entropy_bits_per_frame")), 80.0, 1e-9);
  EXPECT_NEAR(std::stod(kv.at("entropy_bps")), 6000.0, 1e-6);
  EXPECT_NEAR(std::stod(kv.at("entropy_layer_5")), 10.0, 1e-9);
  EXPECT_NEAR(std::stod(kv.at("cross_entropy_bits_per_frame")), 80.0, 1e-9);
}

TEST_F(Cli, EvalCrossEntropyWithPrior) {
  ss::ModelConfig c;
  c.enc_channels = 4;
  c.dec_channels = 4;
  c.embedding_dim = 8;
  ss::IndexMatrix prior(4, 1), input(2, 1);
  prior.data = {0, 0, 0, 1};  // smoothed: p(0) = 4/1028, p(1) = 2/1028
  input.data = {1, 1};
  ss::write_file(path("prior.ssbc"), ss::pack(prior, c).to_bytes());
  ss::write_file(path("input.ssbc"), ss::pack(input, c).to_bytes());
  const auto r = run({"eval", "--model", path("model.ssck"), "--in", path("input.ssbc"), "--prior",
                      path("prior.ssbc")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_NEAR(std::stod(kv.at("cross_entropy_bits_per_frame")), -std::log2(2.0 / 1028.0), 1e-6);
  EXPECT_EQ(kv.at("entropy_bits_per_frame"), "0");
}

TEST_F(Cli, EvalLengthMismatch) {
  const auto r = run({"eval", "--model", path("model.ssck"), "--in", path("short.wav"), "--ref",
                      path("one_second.wav")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("length mismatch"), std::string::npos) << r.err;
}

TEST_F(Cli, BenchReportsPositiveRtf) {
  const auto r = run({"bench", "--model", path("model.ssck"), "--seconds", "0.2", "--runs", "1", "--format", "kv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_GT(std::stod(kv.at("rtf")), 0.0);
  EXPECT_EQ(kv.at("audio_seconds"), "0.2");
  const auto text = run({"bench", "--model", path("model.ssck"), "--seconds", "0.2", "--runs", "1"});
  EXPECT_EQ(text.out.rfind("RTF ", 0), 0u) << text.out;
}

TEST_F(Cli, TrainWritesCheckpointAndIsDeterministic) {
  const auto a = run({"train", "--config", path("toy.cfg"), "--data", path("data"), "--out", path("t1.ssck")});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run({"train", "--config", path("toy.cfg"), "--data", path("data"), "--out", path("t2.ssck")});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(ss::read_file(path("t1.ssck")), ss::read_file(path("t2.ssck")));
  const auto kv = key_values(a.out);
  EXPECT_EQ(kv.at("steps"), "3");
  EXPECT_EQ(kv.at("rec_first"), key_values(b.out).at("rec_first"));
  EXPECT_NE(a.err.find("step=2"), std::string::npos) << a.err;

  const auto ck = ss::load_checkpoint(path("t1.ssck"));
  EXPECT_TRUE(ck.model.rvq.initialized());
  EXPECT_FALSE(ck.discriminators.has_value());

  const auto c = run({"train", "--config", path("toy.cfg"), "--data", path("data"), "--out", path("t3.ssck"),
                      "--seed", "6", "--steps", "1"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(key_values(c.out).at("rec_first"), kv.at("rec_first"));
}

TEST_F(Cli, TrainErrors) {
  auto r = run({"train", "--config", path("toy.cfg"), "--data", path("nowhere"), "--out", path("t.ssck")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  EXPECT_NE(r.err.find("data directory not found"), std::string::npos) << r.err;

  r = run({"train", "--config", path("toy.cfg"), "--data", path("data"), "--out", path("no/such/dir/t.ssck")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot write"), std::string::npos) << r.err;

  std::ofstream(path("bad.cfg")) << "steps = 3\nwarp = 9\n";
  r = run({"train", "--config", path("bad.cfg"), "--data", path("data"), "--out", path("t.ssck")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config line 2: unknown key 'warp'"), std::string::npos) << r.err;
}

TEST_F(Cli, LogLevelFromEnvironment) {
  const std::vector<std::string> args{"encode", "--model", path("model.ssck"), "--in", path("short.wav"), "--out",
                                      path("l.ssbc")};
  setenv("SOUNDSTREAM_LOG", "error", 1);
  EXPECT_EQ(run(args).err, "");
  setenv("SOUNDSTREAM_LOG", "info", 1);
  EXPECT_NE(run(args).err.find("[info]"), std::string::npos);
  unsetenv("SOUNDSTREAM_LOG");
}

TEST_F(Cli, UsageAndHelp) {
  auto r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("encode"), std::string::npos);
  r = run({"encode", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--nq"), std::string::npos);
}

TEST_F(Cli, BinaryExitCodes) {
  const std::string bin = SOUNDSTREAM_CLI;
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status(bin + " --help"), 0);
  EXPECT_EQ(status(bin + " encode --nq 0"), 2);
  EXPECT_EQ(status(bin + " encode --model " + path("model.ssck") + " --in " + path("48k.wav") + " --out " +
                   path("z.ssbc")),
            1);
  EXPECT_EQ(status(bin + " encode --model " + path("model.ssck") + " --in " + path("short.wav") + " --out " +
                   path("z.ssbc")),
            0);
}
