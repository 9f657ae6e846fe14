// Builds one synthetic training triplet and renders it with an untrained
// aprnet generator. Writes content/style/ground-truth/rendered PNGs.
//
//   render_demo <out-dir> [seed]

#include <cstdlib>
#include <iostream>

#include "aprnet/aprnet.hpp"

int main(int argc, char** argv) {
  using namespace aprnet;
  if (argc < 2) {
    std::cerr << "usage: render_demo <out-dir> [seed]\n";
    return 1;
  }
  const std::filesystem::path out = argv[1];
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;

  Rng rng(seed);
  TripletOptions opt;
  opt.height = 32;
  opt.width = 96;
  const auto source = synthetic_text_line(rng, opt.height, 120);
  const auto triplet = make_triplet(source, rng, opt);

  RenderConfig rc;
  rc.variant = Variant::aprnet;
  rc.seed = seed;
  Generator<float> gen(rc);
  const auto rendered = gen.render(triplet.content, triplet.style);

  save_png(out / "content.png", triplet.content);
  save_png(out / "style.png", triplet.style);
  save_png(out / "ground_truth.png", triplet.ground_truth);
  save_png(out / "rendered.png", rendered);
  std::cout << "psnr of the untrained render: " << psnr(rendered, triplet.ground_truth) << " dB\n";
  return 0;
}
