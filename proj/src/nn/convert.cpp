#include "pmr/nn/convert.hpp"

#include <algorithm>

#include "pmr/errors.hpp"

namespace pmr::nn {

Tensor to_tensor(const media::FrameClip& clip) {
    const auto s = clip.samples();
    return Tensor({clip.frames(), clip.height(), clip.width(), clip.channels()},
                  std::vector<double>(s.begin(), s.end()));
}

media::FrameClip to_clip(const Tensor& t, const media::ClipMeta& meta) {
    if (t.rank() != 4) fail(ErrorKind::ShapeMismatch, "clip tensor must be rank 4");
    return media::FrameClip::clamped(t.frames(), t.height(), t.width(), t.channels(), t.values(), meta);
}

Tensor to_tensor(const std::vector<flow::TiltField>& fields) {
    if (fields.empty()) fail(ErrorKind::NoFlows, "no fields to convert");
    const int h = fields.front().height();
    const int w = fields.front().width();
    Tensor out({static_cast<int>(fields.size()), h, w, 2});
    const std::size_t frame = static_cast<std::size_t>(h) * w * 2;
    for (std::size_t t = 0; t < fields.size(); ++t) {
        if (fields[t].height() != h || fields[t].width() != w) {
            fail(ErrorKind::ShapeMismatch, "fields differ in shape");
        }
        std::copy(fields[t].vectors().begin(), fields[t].vectors().end(), out.data() + t * frame);
    }
    return out;
}

std::vector<flow::TiltField> to_tilts(const Tensor& t) {
    if (t.rank() != 4 || t.channels() != 2) fail(ErrorKind::ShapeMismatch, "tilt tensor must be (T,H,W,2)");
    const std::size_t frame = static_cast<std::size_t>(t.height()) * t.width() * 2;
    std::vector<flow::TiltField> out;
    for (int k = 0; k < t.frames(); ++k) {
        out.emplace_back(t.height(), t.width(),
                         std::vector<double>(t.data() + k * frame, t.data() + (k + 1) * frame));
    }
    return out;
}

}  // namespace pmr::nn
