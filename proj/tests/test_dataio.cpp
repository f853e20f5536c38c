#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "authnet/dataio.hpp"
#include "authnet/error.hpp"
#include "authnet/hash.hpp"
#include "authnet/model.hpp"
#include "authnet/pipeline.hpp"

using namespace authnet;

namespace {

// unique scratch directory per test binary run
struct Scratch {
    std::filesystem::path dir;
    Scratch() {
        dir = std::filesystem::temp_directory_path() /
              ("authnet_dataio_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
    }
    ~Scratch() { std::filesystem::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

Scratch scratch;

void corrupt_byte(const std::string& path, std::size_t offset_from_end) {
    std::string bytes = read_text_file(path);
    REQUIRE(bytes.size() > offset_from_end);
    bytes[bytes.size() - 1 - offset_from_end] ^= 0x01;
    write_text_file(path, bytes);
}

AuthKey small_key() {
    AuthKey key;
    key.mask = Tensor({2, 2}, {1.1, 0.9, 1.0, 0.75});
    key.offset = Tensor({1, 2, 2}, {0.25, -0.25, 0.0, 0.49});
    key.eps_mask = 0.5;
    key.eps_offset = 0.5;
    key.literal_mask_box = false;
    key.bits.indices = {0, 2};
    key.seg_index = 3;
    key.gamma = 1.5;
    return key;
}

} // namespace

TEST_CASE("hand-written idx pair loads with documented layout") {
    // 2 images of 2x3 pixels plus matching labels, big-endian headers
    std::string img;
    auto be32 = [&](std::string& s, std::uint32_t v) {
        s.push_back(static_cast<char>(v >> 24));
        s.push_back(static_cast<char>((v >> 16) & 0xff));
        s.push_back(static_cast<char>((v >> 8) & 0xff));
        s.push_back(static_cast<char>(v & 0xff));
    };
    be32(img, 0x00000803u);
    be32(img, 2);
    be32(img, 2);
    be32(img, 3);
    for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
    std::string lbl;
    be32(lbl, 0x00000801u);
    be32(lbl, 2);
    lbl.push_back(3);
    lbl.push_back(7);

    std::string ip = scratch / "hand-images.idx";
    std::string lp = scratch / "hand-labels.idx";
    write_text_file(ip, img);
    write_text_file(lp, lbl);

    IdxDataset ds = load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.images.shape() == std::vector<std::size_t>{2, 1, 2, 3});
    CHECK(ds.labels[0] == 3);
    CHECK(ds.labels[1] == 7);
    CHECK(ds.num_classes == 8); // max label + 1
    for (int i = 0; i < 12; ++i)
        CHECK(ds.images[static_cast<std::size_t>(i)] ==
              doctest::Approx(i * 20 / 255.0).epsilon(1e-12));
}

TEST_CASE("idx error cases") {
    CHECK_THROWS_AS(load_idx(scratch / "nope-img", scratch / "nope-lbl"), IoError);

    std::string ip = scratch / "bad-images.idx";
    std::string lp = scratch / "bad-labels.idx";

    write_text_file(ip, "short");
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("truncated"), FormatError);

    std::string img(16, '\0');
    img[2] = 0x09; // wrong type byte in the magic
    write_text_file(ip, img);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("magic"), FormatError);

    // valid header claiming 1 image of 4x4 but no payload
    std::string hdr;
    auto be32 = [&](std::string& s, std::uint32_t v) {
        s.push_back(static_cast<char>(v >> 24));
        s.push_back(static_cast<char>((v >> 16) & 0xff));
        s.push_back(static_cast<char>((v >> 8) & 0xff));
        s.push_back(static_cast<char>(v & 0xff));
    };
    be32(hdr, 0x00000803u);
    be32(hdr, 1);
    be32(hdr, 4);
    be32(hdr, 4);
    write_text_file(ip, hdr);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("truncated"), FormatError);

    // good images, label count mismatch
    hdr.append(16, 'x');
    write_text_file(ip, hdr);
    std::string lbl;
    be32(lbl, 0x00000801u);
    be32(lbl, 2);
    lbl.push_back(0);
    lbl.push_back(1);
    write_text_file(lp, lbl);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("mismatch"), FormatError);
}

TEST_CASE("generated digits survive an idx round trip bit-exactly") {
    IdxDataset ds = gen_digits(40, 123);
    REQUIRE(ds.size() == 40);
    CHECK(ds.images.shape() == std::vector<std::size_t>{40, 1, 28, 28});
    CHECK(ds.num_classes == 10);

    // pixels are u8 levels, so v*255 must be integral and within [0,1]
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        double v = ds.images[i];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
    }

    // class balance: 40 samples over 10 classes = 4 each
    std::vector<int> counts(10, 0);
    for (int l : ds.labels) counts[static_cast<std::size_t>(l)]++;
    for (int c : counts) CHECK(c == 4);

    // shuffled, not emitted class-by-class
    bool sorted = true;
    for (std::size_t i = 1; i < ds.labels.size(); ++i)
        if (ds.labels[i] < ds.labels[i - 1]) sorted = false;
    CHECK_FALSE(sorted);

    std::string ip = scratch / "digits-images.idx";
    std::string lp = scratch / "digits-labels.idx";
    save_idx(ds, ip, lp);
    IdxDataset back = load_idx(ip, lp);
    CHECK(back.size() == ds.size());
    CHECK(max_abs_diff(back.images, ds.images) == 0.0);
    CHECK(back.labels == ds.labels);

    // determinism and seed sensitivity
    IdxDataset same = gen_digits(40, 123);
    CHECK(max_abs_diff(same.images, ds.images) == 0.0);
    IdxDataset other = gen_digits(40, 124);
    CHECK(max_abs_diff(other.images, ds.images) > 0.0);
}

TEST_CASE("synthetic blobs") {
    IdxDataset ds = gen_synthetic(3, 5, {1, 4, 4}, 2.0, 9);
    REQUIRE(ds.size() == 15);
    CHECK(ds.num_classes == 3);
    CHECK(ds.images.shape() == std::vector<std::size_t>{15, 1, 4, 4});
    for (std::size_t i = 0; i < 15; ++i) CHECK(ds.labels[i] == static_cast<int>(i % 3));
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        CHECK(ds.images[i] >= 0.0);
        CHECK(ds.images[i] <= 1.0);
    }
    IdxDataset same = gen_synthetic(3, 5, {1, 4, 4}, 2.0, 9);
    CHECK(max_abs_diff(same.images, ds.images) == 0.0);
}

TEST_CASE("save_idx rejects multi-channel images") {
    IdxDataset ds;
    ds.images = Tensor({1, 3, 2, 2});
    ds.labels = {0};
    ds.num_classes = 1;
    CHECK_THROWS_AS(save_idx(ds, scratch / "x", scratch / "y"), ValueError);
}

TEST_CASE("dataset slicing and gathering") {
    IdxDataset ds = gen_synthetic(2, 4, {1, 2, 2}, 1.0, 4);
    IdxDataset cut = slice_dataset(ds, 2, 3);
    CHECK(cut.size() == 3);
    CHECK(cut.labels[0] == ds.labels[2]);
    CHECK(max_abs_diff(cut.images, Tensor({3, 1, 2, 2}, std::vector<double>(
                                              ds.images.data() + 2 * 4,
                                              ds.images.data() + 5 * 4))) == 0.0);
    CHECK_THROWS_AS(slice_dataset(ds, 6, 5), ValueError);

    IdxDataset picked = gather_dataset(ds, {7, 0, 0});
    CHECK(picked.size() == 3);
    CHECK(picked.labels[0] == ds.labels[7]);
    CHECK(picked.labels[1] == ds.labels[0]);
    CHECK(picked.labels[2] == ds.labels[0]);
    CHECK_THROWS_AS(gather_dataset(ds, {8}), ValueError);

    Tensor one = single_image(ds, 5);
    CHECK(one.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    CHECK(one[0] == ds.images[5 * 4]);
    CHECK_THROWS_AS(single_image(ds, 8), ValueError);
}

TEST_CASE("checkpoint round trip preserves params and meta bit-exactly") {
    SequentialModel m = make_model("lenet", {1, 28, 28}, 10, 77);
    CheckpointMeta meta;
    meta.seg_index = 3;
    meta.note = "clean baseline";
    std::string path = scratch / "model.ckpt";
    save_checkpoint(m, meta, path);

    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK(param_hash(lc.model) == param_hash(m));
    CHECK(lc.model.input_shape == m.input_shape);
    CHECK(lc.model.num_classes == 10);
    CHECK(lc.model.num_layers() == m.num_layers());
    CHECK(lc.meta.seg_index == 3);
    CHECK(lc.meta.note == "clean baseline");

    // meta is optional
    save_checkpoint(m, CheckpointMeta{}, path);
    LoadedCheckpoint bare = load_checkpoint(path);
    CHECK(bare.meta.seg_index == -1);
    CHECK(bare.meta.note.empty());

    // newlines in the note cannot break the manifest
    CheckpointMeta tricky;
    tricky.note = "line1\nline2";
    save_checkpoint(m, tricky, path);
    CHECK(load_checkpoint(path).meta.note == "line1 line2");
}

TEST_CASE("checkpoint integrity failures") {
    CHECK_THROWS_AS(load_checkpoint(scratch / "missing.ckpt"), IoError);

    SequentialModel m = make_model("tiny-mlp", {1, 4, 4}, 2, 5);
    std::string path = scratch / "corrupt.ckpt";

    save_checkpoint(m, CheckpointMeta{}, path);
    corrupt_byte(path, 0); // last payload byte
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("payload hash"),
                         FormatError);

    save_checkpoint(m, CheckpointMeta{}, path);
    {
        std::string bytes = read_text_file(path);
        std::size_t at = bytes.find("classes=");
        REQUIRE(at != std::string::npos);
        bytes[at + 8] ^= 0x01;
        write_text_file(path, bytes);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("manifest hash"),
                         FormatError);

    write_text_file(path, "BOGUS v1\nmanifest_hash=0\n---\n");
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), FormatError);

    // a key file is not a checkpoint
    std::string kp = scratch / "key-not-ckpt.authkey";
    save_key(small_key(), kp);
    CHECK_THROWS_AS(load_checkpoint(kp), FormatError);
}

TEST_CASE("key round trip is bit-exact") {
    AuthKey key = small_key();
    std::string path = scratch / "k.authkey";
    save_key(key, path);
    AuthKey back = load_key(path);
    CHECK(max_abs_diff(back.mask, key.mask) == 0.0);
    CHECK(max_abs_diff(back.offset, key.offset) == 0.0);
    CHECK(back.mask.shape() == std::vector<std::size_t>{2, 2});
    CHECK(back.offset.shape() == std::vector<std::size_t>{1, 2, 2});
    CHECK(back.eps_mask == key.eps_mask);
    CHECK(back.eps_offset == key.eps_offset);
    CHECK(back.literal_mask_box == false);
    CHECK(back.bits.indices == std::vector<std::size_t>{0, 2});
    CHECK(back.seg_index == 3);
    CHECK(back.gamma == 1.5);
}

TEST_CASE("loading a key that violates its own box is refused") {
    AuthKey key = small_key();
    key.mask[0] = 1.6; // |1.6 - 1| >= eps_mask = 0.5
    std::string path = scratch / "bad.authkey";
    save_key(key, path);
    CHECK_THROWS_AS(load_key(path), ConstraintError);
}

TEST_CASE("key file integrity") {
    AuthKey key = small_key();
    std::string path = scratch / "c.authkey";
    save_key(key, path);
    corrupt_byte(path, 3);
    CHECK_THROWS_AS(load_key(path), FormatError);
    CHECK_THROWS_AS(load_key(scratch / "missing.authkey"), IoError);
}

TEST_CASE("csv_num emits shortest round-trip forms") {
    CHECK(csv_num(0.1) == "0.1");
    CHECK(csv_num(1.0) == "1");
    CHECK(csv_num(-2.5) == "-2.5");
    CHECK(csv_num(std::size_t{42}) == "42");
    for (double v : {1.0 / 3.0, 0.1, 1e-17, 123456789.123456789, -0.0, 2e300}) {
        CHECK(std::stod(csv_num(v)) == v);
    }
}

TEST_CASE("export_csv writes rfc-4180 with crlf and minimal quoting") {
    std::string path = scratch / "t.csv";
    export_csv(path, {"id", "name,with,commas", "note"},
               {{"1", "plain", "say \"hi\""}, {"2", "x", "multi\nline"}});
    std::string text = read_text_file(path);
    CHECK(text ==
          "id,\"name,with,commas\",note\r\n"
          "1,plain,\"say \"\"hi\"\"\"\r\n"
          "2,x,\"multi\nline\"\r\n");
    CHECK_THROWS_AS(export_csv(path, {}, {}), ValueError);
}

TEST_CASE("text file helpers and file hash") {
    std::string path = scratch / "note.txt";
    write_text_file(path, "abc");
    CHECK(read_text_file(path) == "abc");
    CHECK(file_exists(path));
    CHECK_FALSE(file_exists(scratch / "nothing"));

    Fnv1a h;
    h.update("abc", 3);
    CHECK(file_hash(path) == h.digest());
    CHECK_THROWS_AS(read_text_file(scratch / "nothing"), IoError);
}
