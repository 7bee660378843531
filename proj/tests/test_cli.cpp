#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "cupid/dataset.hpp"
#include "cupid/manifest.hpp"
#include "cupid/util.hpp"
#include "cupid/wfdb.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace cupid;

namespace {

const std::string kCli = CUPID_CLI_PATH;

int run_cli(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string fresh_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("cupid_cli_" + tag);
    fs::remove_all(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("cli exit codes: success, unknown key, missing input") {
    const std::string dir = fresh_dir("codes");
    CHECK(run_cli("synth --out_dir " + dir + "/s --n_windows 12 --sdnn_list 0 --presets normal") == 0);
    CHECK(fs::exists(dir + "/s/data.cpw1"));
    CHECK(fs::exists(dir + "/s/manifest.json"));

    // unknown config key -> 2
    write_file_text(dir + "/bad.cfg", "not_a_key = 5\n");
    CHECK(run_cli("synth --config " + dir + "/bad.cfg --out_dir " + dir + "/x") == 2);

    // missing input file -> 3
    CHECK(run_cli("pretrain --data " + dir + "/nope.cpw1 --out_dir " + dir + "/y") == 3);

    // unknown flag -> 2 (CLI parse error)
    CHECK(run_cli("synth --definitely_not_a_flag 1") == 2);
}

TEST_CASE("config file values apply and flags override them") {
    const std::string dir = fresh_dir("cfg");
    fs::create_directories(dir);
    write_file_text(dir + "/synth.cfg", "# corpus\nn_windows = 14\npresets = normal\nsdnn_list = 0\n");
    CHECK(run_cli("synth --config " + dir + "/synth.cfg --out_dir " + dir + "/a") == 0);
    CHECK(read_cpw1(dir + "/a/data.cpw1").size() == 14);

    // flag wins over the file
    CHECK(run_cli("synth --config " + dir + "/synth.cfg --n_windows 7 --out_dir " + dir + "/b") == 0);
    CHECK(read_cpw1(dir + "/b/data.cpw1").size() == 7);

    // JSON config works too
    write_file_text(dir + "/synth.json", "{\"n_windows\": 9, \"presets\": \"normal\", \"sdnn_list\": \"0\"}");
    CHECK(run_cli("synth --config " + dir + "/synth.json --out_dir " + dir + "/c") == 0);
    CHECK(read_cpw1(dir + "/c/data.cpw1").size() == 9);
}

TEST_CASE("manifest rerun reproduces a pretrain run bit for bit") {
    const std::string dir = fresh_dir("rerun");
    REQUIRE(run_cli("synth --out_dir " + dir + "/data --n_windows 24 --seed 3") == 0);
    REQUIRE(run_cli("pretrain --data " + dir + "/data/data.cpw1 --out_dir " + dir +
                    "/run1 --iterations 6 --batch_size 4 --d_model 32 --enc_blocks 1 "
                    "--dec_blocks 2 --seed 9") == 0);
    REQUIRE(run_cli("rerun " + dir + "/run1/manifest.json --out-dir " + dir + "/run2") == 0);

    CHECK(read_file_bytes(dir + "/run1/ckpt_final.cpck") ==
          read_file_bytes(dir + "/run2/ckpt_final.cpck"));

    // loss values identical column for column (wall_ms is wall-clock time)
    auto losses = [](const std::string& p) {
        std::vector<std::string> out;
        for (const auto& line : split(trim(read_file_text(p)), '\n')) {
            const auto cols = split(line, ',');
            out.push_back(cols[0] + "," + cols[1]);
        }
        return out;
    };
    CHECK(losses(dir + "/run1/loss.csv") == losses(dir + "/run2/loss.csv"));

    const RunManifest m = RunManifest::read(dir + "/run1/manifest.json");
    CHECK(m.subcommand == "pretrain");
    CHECK(m.config.at("iterations") == "6");
    CHECK(m.input_hashes.count(dir + "/data/data.cpw1") == 1);
}

TEST_CASE("spectrogram subcommand emits a frames CSV") {
    const std::string dir = fresh_dir("spec");
    REQUIRE(run_cli("synth --out_dir " + dir + "/data --n_windows 12") == 0);
    REQUIRE(run_cli("spectrogram --data " + dir + "/data/data.cpw1 --index 1 --out_dir " + dir +
                    "/spec") == 0);
    const auto lines = split(trim(read_file_text(dir + "/spec/spectrogram.csv")), '\n');
    CHECK(lines[0] == "frame,bin,freq_hz,value");
    CHECK(lines.size() == size_t(1 + 50 * 255));
}

TEST_CASE("preprocess subcommand converts a wfdb record with annotations") {
    const std::string dir = fresh_dir("prep");
    fs::create_directories(dir);

    // 35 s of 1.4 Hz activity at 200 Hz source rate, written as format 212
    std::vector<std::vector<double>> chan(1);
    for (int i = 0; i < 200 * 35; ++i)
        chan[0].push_back(std::sin(2.0 * 3.14159265358979 * 1.4 * i / 200.0));
    const auto rec = cupid::wfdb::write_record("r1", chan, 200.0, 212, 200.0, 0);
    write_file_text(dir + "/r1.hea", rec.header_text);
    write_file_bytes(dir + "/r1.dat", rec.dat.data(), rec.dat.size());

    // rhythm annotations: "(N" from 0, "(AFIB" from 20 s (source samples)
    ByteWriter atr;
    atr.u16(static_cast<uint16_t>((28 << 10) | 0));
    atr.u16(static_cast<uint16_t>((63 << 10) | 2));
    atr.bytes("(N", 2);
    atr.u16(static_cast<uint16_t>(59 << 10));  // SKIP to sample 4000
    atr.u16(static_cast<uint16_t>((4000 >> 16) & 0xFFFF));
    atr.u16(static_cast<uint16_t>(4000 & 0xFFFF));
    atr.u16(static_cast<uint16_t>((28 << 10) | 0));
    atr.u16(static_cast<uint16_t>((63 << 10) | 5));
    atr.bytes("(AFIB", 5);
    atr.u8(0);  // pad to even
    atr.u16(0);
    const auto& atr_bytes = atr.data();
    write_file_bytes(dir + "/r1.atr", atr_bytes.data(), atr_bytes.size());

    REQUIRE(run_cli("preprocess --input " + dir + "/r1.hea --atr " + dir + "/r1.atr --out_dir " +
                    dir + "/out") == 0);
    const auto wins = read_cpw1(dir + "/out/data.cpw1");
    REQUIRE(wins.size() == 3);  // 35 s -> 3 full windows
    CHECK(wins[0].label == 0);  // "(N"
    CHECK(wins[2].label == 1);  // "(AFIB" covers [20 s, ...)
    CHECK(wins[0].patient_id == "r1");
}

TEST_CASE("probe, finetune, sdnn-report and sweep run end to end") {
    const std::string dir = fresh_dir("chain");
    REQUIRE(run_cli("synth --out_dir " + dir + "/data --n_windows 60 --sdnn_list 0,80 "
                    "--windows_per_patient 2 --seed 21") == 0);
    const std::string small_model =
        " --d_model 16 --enc_blocks 1 --enc_heads 4 --dec_blocks 2 --dec_heads 4";
    REQUIRE(run_cli("pretrain --variant cupid --data " + dir + "/data/data.cpw1 --out_dir " + dir +
                    "/pc --iterations 4 --batch_size 4 --seed 2" + small_model) == 0);
    REQUIRE(run_cli("pretrain --variant mtae --data " + dir + "/data/data.cpw1 --out_dir " + dir +
                    "/pm --iterations 4 --batch_size 4 --seed 2" + small_model) == 0);

    CHECK(run_cli("probe --data " + dir + "/data/data.cpw1 --checkpoint " + dir +
                  "/pc/ckpt_final.cpck --out_dir " + dir + "/probe --folds 3") == 0);
    auto lines = split(trim(read_file_text(dir + "/probe/results.csv")), '\n');
    CHECK(lines[0] == "dataset,variant,fold,accuracy,f1,auc");
    CHECK(lines.size() >= 2);
    CHECK(lines[1].find("data,cupid,") == 0);

    CHECK(run_cli("finetune --data " + dir + "/data/data.cpw1 --checkpoint " + dir +
                  "/pc/ckpt_final.cpck --out_dir " + dir +
                  "/ft --folds 3 --max_epochs 2 --batch_size 16") == 0);
    lines = split(trim(read_file_text(dir + "/ft/results.csv")), '\n');
    CHECK(lines.size() >= 2);

    CHECK(run_cli("sdnn-report --data " + dir + "/data/data.cpw1 --mtae_checkpoint " + dir +
                  "/pm/ckpt_final.cpck --cupid_checkpoint " + dir + "/pc/ckpt_final.cpck" +
                  " --out_dir " + dir + "/sdnn") == 0);
    lines = split(trim(read_file_text(dir + "/sdnn/sdnn.csv")), '\n');
    CHECK(lines[0] == "bin_lo,bin_hi,count,mtae_loss,cupid_loss");
    CHECK(lines.size() == 6);  // 5 bins + header

    // sweep: one valid cell plus one skipped (patch 23 does not divide 1000)
    write_file_text(dir + "/grid.cfg", "patch_sizes = 20,23\nmask_ratios = 0.4\n");
    CHECK(run_cli("sweep --data " + dir + "/data/data.cpw1 --grid " + dir + "/grid.cfg" +
                  " --out_dir " + dir + "/sweep --iterations 4 --batch_size 4 --seed 3" +
                  small_model) == 0);
    lines = split(trim(read_file_text(dir + "/sweep/sweep.csv")), '\n');
    REQUIRE(lines.size() == 3);
    CHECK(lines[1].find("20,") == 0);
    CHECK(split(lines[1], ',')[6] == "0");  // ran
    CHECK(split(lines[2], ',')[6] == "1");  // skipped
    CHECK(lines[2].find("does not divide") != std::string::npos);
}

TEST_CASE("reconstruct subcommand dumps one row per sample") {
    const std::string dir = fresh_dir("recon");
    REQUIRE(run_cli("synth --out_dir " + dir + "/data --n_windows 8") == 0);
    REQUIRE(run_cli("pretrain --data " + dir + "/data/data.cpw1 --out_dir " + dir +
                    "/pre --iterations 4 --batch_size 4 --d_model 32 --enc_blocks 1 "
                    "--dec_blocks 2 --seed 2") == 0);
    REQUIRE(run_cli("reconstruct --data " + dir + "/data/data.cpw1 --checkpoint " + dir +
                    "/pre/ckpt_final.cpck --indices 0,3 --out_dir " + dir + "/rec") == 0);
    const auto lines = split(trim(read_file_text(dir + "/rec/reconstruction.csv")), '\n');
    CHECK(lines[0] == "window,sample_index,time_s,truth,reconstruction,patch_masked");
    CHECK(lines.size() == size_t(1 + 2 * 1000));
}
