use lcmsec::cluster::{default_params, SimCluster, TestPki, DEFAULT_GROUP};
use lcmsec::transport::SimConfig;

fn chans(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn three_nodes_agree_and_exchange() {
    let sim = SimConfig { seed: 1, ..SimConfig::default() };
    let mut pki = TestPki::new(default_params().suite, 1, sim.start_ms).unwrap();
    let channels = chans(&["chatter"]);
    let mut c = SimCluster::build(&sim, &mut pki, &default_params(), DEFAULT_GROUP, &channels, 3).unwrap();
    c.start_all();
    let start = c.now_ms();
    assert!(c.run_until_ready(start + 30_000, &channels), "not ready after 30 s");
    assert!(c.keys_agree("chatter"));
    c.publish(0, "chatter", b"hello").unwrap();
    let t = c.now_ms();
    c.run_until(t + 500);
    for n in &c.nodes[1..] {
        assert_eq!(n.delivered, [("chatter".to_string(), b"hello".to_vec())]);
    }
}
