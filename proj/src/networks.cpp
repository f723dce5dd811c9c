#include "dosgan/networks.hpp"

#include <sstream>

namespace dosgan {

void NetConfig::validate() const {
  auto fail = [&](const std::string& why) { throw Error("invalid network config (" + describe(*this) + "): " + why); };
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (num_domains < 2) fail("num_domains must be >= 2");
  if (base_width < 1) fail("base_width must be >= 1");
  if (residual_blocks < 0) fail("residual_blocks must be >= 0");
  if (downsample_stages < 1 || downsample_stages > 12) fail("downsample_stages must be in [1, 12]");
  const int div = 1 << downsample_stages;
  if (image_h < 4 || image_w < 4 || image_h % div != 0 || image_w % div != 0)
    fail("image size must be divisible by 2^" + std::to_string(downsample_stages));
  if (image_h % 4 != 0 || image_w % 4 != 0) fail("image size must be divisible by 4");
}

std::string describe(const NetConfig& cfg) {
  std::ostringstream os;
  os << cfg.channels << "x" << cfg.image_h << "x" << cfg.image_w << " F=" << cfg.feature_dim
     << " N=" << cfg.num_domains << " base=" << cfg.base_width << " res=" << cfg.residual_blocks
     << " stages=" << cfg.downsample_stages;
  return os.str();
}

void check_image_shape(const NetConfig& cfg, const Shape4& s, const char* who) {
  if (s.c != cfg.channels || s.h != cfg.image_h || s.w != cfg.image_w)
    throw Error(std::string(who) + ": image batch " + to_string(s) + " does not match " +
                std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_h) + "x" +
                std::to_string(cfg.image_w));
}

template class ClassifierNet<float>;
template class ClassifierNet<double>;
template class EncoderNet<float>;
template class EncoderNet<double>;
template class GeneratorNet<float>;
template class GeneratorNet<double>;
template class DiscriminatorNet<float>;
template class DiscriminatorNet<double>;

}  // namespace dosgan
