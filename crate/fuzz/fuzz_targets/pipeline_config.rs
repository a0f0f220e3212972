#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_cli::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = PipelineConfig::from_json_slice(data) {
        let _ = cfg.segment_config();
        let _ = cfg.echo();
    }
});
