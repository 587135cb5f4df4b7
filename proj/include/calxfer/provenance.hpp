#pragma once

#include <string>

namespace calxfer {

/// Names the spectral space a transfer model consumes and produces, e.g. a
/// model fitted on raw slave spectra has input "slave" and output
/// "slave>mfpi". Composition requires the second model's input to equal the
/// first model's output.
struct Provenance {
  std::string input = "slave";
  std::string output = "slave";

  static Provenance fitted(const std::string& input, const std::string& method) {
    return {input, input + ">" + method};
  }

  bool operator==(const Provenance&) const = default;
};

}  // namespace calxfer
