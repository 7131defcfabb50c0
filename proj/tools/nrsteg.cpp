// nrsteg: synthetic video generation, embedding, dataset building, training
// and evaluation of the three-class video steganalysis network.

#include <CLI11.hpp>
#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include "nrsteg/checkpoint.hpp"
#include "nrsteg/config.hpp"
#include "nrsteg/dataset.hpp"
#include "nrsteg/embedders.hpp"
#include "nrsteg/error.hpp"
#include "nrsteg/evaluator.hpp"
#include "nrsteg/model.hpp"
#include "nrsteg/trainer.hpp"
#include "nrsteg/video.hpp"

namespace fs = std::filesystem;
using namespace nrsteg;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(p.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError(p.string() + ": write failed");
}

RunConfig load_config(const std::string& file) { return file.empty() ? RunConfig{} : RunConfig::load(file); }

int cmd_shapes() {
  const auto m = init_model<float>(0);
  const auto chain = shape_chain(m);
  for (const auto& s : chain)
    std::printf("%-8s %dx%dx%d\n", s.layer.c_str(), s.shape.channels, s.shape.height, s.shape.width);
  std::printf("chain=");
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) std::printf(i ? "->%d" : "%d", chain[i].shape.height);
  std::printf("\nfc_in=%d\n", m.fc.in_features);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // keep large tensor buffers in the heap instead of fresh mmap pages per batch
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Video steganalysis with a noise-residual CNN"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 keeps runs deterministic)")->check(CLI::PositiveNumber);

  // gen-video
  auto* gen = app.add_subcommand("gen-video", "Generate a synthetic .y8v video");
  gen->set_help_flag("--help", "Print this help message and exit");  // --h is the height
  std::string kind, gen_out;
  int gw = 0, gh = 0;
  std::uint32_t gfps = 0;
  double gsecs = 0;
  std::uint64_t gseed = 0;
  gen->add_option("--kind", kind, "noise, gradient, blocks or mixed")->required();
  gen->add_option("--w", gw, "Width")->required();
  gen->add_option("--h", gh, "Height")->required();
  gen->add_option("--fps", gfps, "Frames per second")->required();
  gen->add_option("--secs", gsecs, "Duration in seconds")->required();
  gen->add_option("--seed", gseed, "Generator seed");
  gen->add_option("--out", gen_out, "Output .y8v")->required();

  // embed
  auto* emb = app.add_subcommand("embed", "Embed into a video");
  std::string method, in_path, out_path, secret_path, payload_path, key_hex;
  int bits = 2, redundancy = 2, amplitude = 4;
  double rate = 0.1;
  emb->add_option("--method", method, "img, lsbm or ss")->required()->check(CLI::IsMember({"img", "lsbm", "ss"}));
  emb->add_option("--in", in_path, "Cover video (.y8v or image directory)")->required();
  emb->add_option("--out", out_path, "Stego .y8v")->required();
  emb->add_option("--secret", secret_path, "Secret video for img");
  emb->add_option("--bits", bits, "Bits per pixel for img");
  emb->add_option("--rate", rate, "Embedding rate for lsbm");
  emb->add_option("--redundancy", redundancy, "Chip multiplier for ss");
  emb->add_option("--amplitude", amplitude, "Chip amplitude for ss");
  emb->add_option("--payload", payload_path, "Payload file for ss (default: keyed bytes at 0.1 bpp)");
  emb->add_option("--key", key_hex, "Hex key for lsbm and ss");

  // extract
  auto* ext = app.add_subcommand("extract", "Extract from a stego video");
  std::string xmethod, xin, xout, xkey;
  int xbits = 2, xred = 2;
  std::size_t xlen = 0;
  ext->add_option("--method", xmethod, "img or ss")->required()->check(CLI::IsMember({"img", "ss"}));
  ext->add_option("--in", xin, "Stego video")->required();
  ext->add_option("--out", xout, "Recovered .y8v (img) or payload file (ss)")->required();
  ext->add_option("--bits", xbits, "Bits per pixel for img");
  ext->add_option("--key", xkey, "Hex key for ss");
  ext->add_option("--redundancy", xred, "Chip multiplier for ss");
  ext->add_option("--len", xlen, "Payload length in bytes for ss");

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "Build the three-class clip dataset");
  std::string videos_dir, build_out, build_cfg;
  std::optional<int> build_k;
  std::optional<std::uint64_t> build_seed;
  build->add_option("--videos", videos_dir, "Directory of source videos")->required();
  build->add_option("--k", build_k, "Total clips (multiple of 3)");
  build->add_option("--out", build_out, "Output directory")->required();
  build->add_option("--seed", build_seed, "Dataset seed");
  build->add_option("--config", build_cfg, "key=value config file");

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset manifest");
  std::string manifest_path, train_out, train_cfg;
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> train_seed;
  tr->add_option("--manifest", manifest_path, "Dataset manifest")->required();
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_option("--config", train_cfg, "key=value config file");
  tr->add_option("--epochs", epochs, "Epochs");
  tr->add_option("--batch-size", batch_size, "Batch size");
  tr->add_option("--seed", train_seed, "Training seed");

  // eval
  auto* ev = app.add_subcommand("eval", "Confusion-matrix evaluation of a split");
  std::string ev_manifest, ev_model, ev_split, ev_report;
  ev->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--split", ev_split, "train, val or test")->required();
  ev->add_option("--report", ev_report, "Report directory")->required();

  // classify
  auto* cl = app.add_subcommand("classify", "Classify a whole video");
  std::string cl_model, cl_video;
  int segments = 20;
  std::uint64_t cl_seed = 0;
  cl->add_option("--model", cl_model, "Checkpoint")->required();
  cl->add_option("--video", cl_video, "Video (.y8v or image directory)")->required();
  cl->add_option("--segments", segments, "Segments sampled");
  cl->add_option("--seed", cl_seed, "Sampling seed");

  // inspect-errors
  auto* ie = app.add_subcommand("inspect-errors", "Dump misclassified frames with diagnostics");
  std::string ie_manifest, ie_model, ie_split, ie_out;
  ie->add_option("--manifest", ie_manifest, "Dataset manifest")->required();
  ie->add_option("--model", ie_model, "Checkpoint")->required();
  ie->add_option("--split", ie_split, "train, val or test")->required();
  ie->add_option("--out", ie_out, "Output directory")->required();

  auto* sh = app.add_subcommand("shapes", "Print the layer shape chain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*sh) return cmd_shapes();

    if (*gen) {
      write_y8v(gen_synthetic_video(parse_synthetic_kind(kind), gw, gh, gfps, gsecs, gseed), gen_out);
      return 0;
    }

    if (*emb) {
      RawVideo v = load_frames(in_path);
      if (method == "img") {
        if (secret_path.empty()) throw ValidationError("embed --method img needs --secret");
        const RawVideo secret = load_frames(secret_path);
        for (std::size_t i = 0; i < v.frames.size(); ++i)
          v.frames[i] = embed_image_in_image(
              v.frames[i], resize_bilinear(secret.frames[i % secret.frames.size()], v.width, v.height), bits);
      } else {
        if (key_hex.empty()) throw ValidationError("embed --method " + method + " needs --key");
        const StegoKey key = StegoKey::parse_hex(key_hex);
        if (method == "lsbm") {
          v.frames = embed_lsb_matching(v.frames, rate, key);
        } else {
          SpreadSpectrumConfig cfg = default_spread_spectrum(total_pixels(v.frames), key);
          cfg.redundancy = redundancy;
          cfg.amplitude = amplitude;
          if (!payload_path.empty()) cfg.payload = read_bytes(payload_path);
          v.frames = embed_spread_spectrum(v.frames, cfg);
          std::printf("payload_bytes=%zu bpp=%.6f\n", cfg.payload.size(),
                      double(cfg.payload.size()) * 8.0 / double(total_pixels(v.frames)));
        }
      }
      write_y8v(v, out_path);
      return 0;
    }

    if (*ext) {
      RawVideo v = load_frames(xin);
      if (xmethod == "img") {
        for (auto& f : v.frames) f = extract_image(f, xbits);
        write_y8v(v, xout);
      } else {
        if (xkey.empty()) throw ValidationError("extract --method ss needs --key");
        if (xlen == 0) throw ValidationError("extract --method ss needs --len");
        const auto p = extract_spread_spectrum(v.frames, StegoKey::parse_hex(xkey), xred, xlen);
        write_bytes(xout, p.bytes);
        double c = 0;
        for (double x : p.confidence) c += x;
        std::printf("bits=%zu mean_confidence=%.4f\n", p.confidence.size(), c / double(p.confidence.size()));
      }
      return 0;
    }

    if (*build) {
      RunConfig cfg = load_config(build_cfg);
      if (build_k) cfg.dataset.k = *build_k;
      if (build_seed) cfg.set("seed", std::to_string(*build_seed));
      cfg.validate();
      const auto m = build_dataset(list_videos(videos_dir), cfg.dataset, build_out, threads);
      const auto sizes = split_sizes(cfg.dataset.k);
      std::printf("clips=%d train=%d val=%d test=%d frames=%zu\n", cfg.dataset.k, sizes.train, sizes.val, sizes.test,
                  m.records.size());
      return 0;
    }

    if (*tr) {
      RunConfig cfg = load_config(train_cfg);
      if (epochs) cfg.train.epochs = *epochs;
      if (batch_size) cfg.train.batch_size = *batch_size;
      if (train_seed) cfg.set("seed", std::to_string(*train_seed));
      if (app.count("--threads")) cfg.train.threads = threads;
      cfg.validate();
      const auto m = DatasetManifest::read(manifest_path);
      const auto r = train(m, cfg.train, train_out, [](const EpochMetrics& e) {
        std::printf("epoch %d loss %.4f val_acc %.4f (%.1fs)\n", e.epoch, e.train_loss, e.val_accuracy, e.seconds);
        std::fflush(stdout);
      });
      std::printf("best epoch %d val_acc %.4f\n", r.best_epoch, r.best_val_accuracy);
      return 0;
    }

    if (*ev) {
      const Split split = parse_split(ev_split);
      const auto e = evaluate(load_checkpoint(ev_model), DatasetManifest::read(ev_manifest), split, threads);
      write_report(e.matrix, ev_split, ev_report);
      std::cout << format_report(e.matrix, ev_split);
      return 0;
    }

    if (*cl) {
      const auto v = classify_video(load_checkpoint(cl_model), cl_video, segments, cl_seed, threads);
      for (const auto& f : v.frames)
        std::printf("segment %d frame %d -> %s (%.3f %.3f %.3f)\n", f.segment, f.frame_index,
                    kClassNames[std::size_t(f.predicted)], f.probs[0], f.probs[1], f.probs[2]);
      std::printf("verdict: %s\n", kClassNames[std::size_t(v.verdict)]);
      return 0;
    }

    if (*ie) {
      const Split split = parse_split(ie_split);
      const auto r = inspect_errors(load_checkpoint(ie_model), DatasetManifest::read(ie_manifest), split, ie_out,
                                    threads);
      std::size_t black = 0;
      for (const auto& e : r.entries) black += e.stats.black;
      std::printf("misclassified=%zu black=%zu\n", r.entries.size(), black);
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
