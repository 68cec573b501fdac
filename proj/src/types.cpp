#include "spinefuse/types.hpp"

#include "spinefuse/errors.hpp"

namespace spinefuse {

int class_id_from_name(const std::string& name) {
  for (int c = 0; c < kNumClasses; ++c)
    if (name == kClassNames[c]) return c;
  throw data_error("unknown level name: '" + name + "'");
}

const char* to_string(Modality m) {
  switch (m) {
    case Modality::kForce: return "force";
    case Modality::kUltrasound: return "us";
    case Modality::kFusion: return "fusion";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "force") return Modality::kForce;
  if (s == "us") return Modality::kUltrasound;
  if (s == "fusion") return Modality::kFusion;
  throw param_error("unknown modality '" + s + "' (expected force|us|fusion)");
}

}  // namespace spinefuse
