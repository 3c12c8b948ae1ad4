#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(doc) = artikit::export::import_urdf(text) {
            let _ = artikit::export::lint(&doc, None);
            let _ = doc.forward_kinematics(&Default::default());
        }
    }
});
