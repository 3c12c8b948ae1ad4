#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = artikit::orchestrator::extract_fenced_json(text);
        let _ = artikit::orchestrator::parse_design_reply(text);
        for role in artikit::orchestrator::Role::ALL {
            let _ = artikit::orchestrator::validate_role_output(role, text);
        }
    }
});
