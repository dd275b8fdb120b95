//! Topic names, topic filters, and the wildcard matching rules from
//! MQTT 3.1.1 §4.7.

/// A publishable topic name: non-empty, no wildcards, no NUL, fits in a
/// 16-bit length prefix.
pub fn valid_topic(topic: &str) -> bool {
    !topic.is_empty() && topic.len() <= u16::MAX as usize && !topic.contains(['+', '#', '\0'])
}

/// A subscription filter: `+` must occupy a whole level, `#` must occupy the
/// final level.
pub fn valid_filter(filter: &str) -> bool {
    if filter.is_empty() || filter.len() > u16::MAX as usize || filter.contains('\0') {
        return false;
    }
    let levels: Vec<&str> = filter.split('/').collect();
    levels.iter().enumerate().all(|(i, level)| match *level {
        "#" => i == levels.len() - 1,
        "+" => true,
        other => !other.contains(['+', '#']),
    })
}

/// Level-wise wildcard match of `topic` against `filter`.
///
/// `+` matches exactly one level (including an empty one), `#` matches the
/// remaining levels including the parent (`sport/#` matches `sport`), and
/// filters that begin with a wildcard never match `$`-prefixed topics.
pub fn matches(filter: &str, topic: &str) -> bool {
    if topic.starts_with('$') && (filter.starts_with('+') || filter.starts_with('#')) {
        return false;
    }
    let mut topics = topic.split('/');
    for level in filter.split('/') {
        if level == "#" {
            return true;
        }
        match topics.next() {
            Some(t) if level == "+" || level == t => {}
            _ => return false,
        }
    }
    topics.next().is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn topic_validity() {
        assert!(valid_topic("a"));
        assert!(valid_topic("vitals/hr/patient-7"));
        assert!(valid_topic("/leading/slash"));
        assert!(valid_topic("trailing/slash/"));
        assert!(valid_topic("with spaces is fine"));
        assert!(!valid_topic(""));
        assert!(!valid_topic("has/+/wildcard"));
        assert!(!valid_topic("has/#"));
        assert!(!valid_topic("nul\0byte"));
    }

    #[test]
    fn filter_validity() {
        assert!(valid_filter("sport/tennis/#"));
        assert!(valid_filter("#"));
        assert!(valid_filter("+"));
        assert!(valid_filter("+/tennis/#"));
        assert!(valid_filter("sport/+/player1"));
        assert!(valid_filter("a//b"));
        assert!(!valid_filter(""));
        assert!(!valid_filter("sport/tennis#"));
        assert!(!valid_filter("sport/tennis/#/ranking"));
        assert!(!valid_filter("sport+"));
        assert!(!valid_filter("#/tail"));
    }

    #[test]
    fn matching_follows_the_specification_examples() {
        let yes = [
            ("sport/tennis/player1/#", "sport/tennis/player1"),
            ("sport/tennis/player1/#", "sport/tennis/player1/ranking"),
            ("sport/tennis/player1/#", "sport/tennis/player1/score/wimbledon"),
            ("sport/#", "sport"),
            ("#", "sport/tennis/player1"),
            ("sport/tennis/+", "sport/tennis/player1"),
            ("sport/tennis/+", "sport/tennis/player2"),
            ("sport/+", "sport/"),
            ("+/+", "/finance"),
            ("/+", "/finance"),
            ("+", "sport"),
            ("$SYS/#", "$SYS/broker/load"),
            ("a//b", "a//b"),
        ];
        let no = [
            ("sport/tennis/+", "sport/tennis/player1/ranking"),
            ("sport/+", "sport"),
            ("+", "sport/tennis"),
            ("+", "/finance"),
            ("#", "$SYS/broker/load"),
            ("+/monitor/Clients", "$SYS/monitor/Clients"),
            ("a/b", "a/c"),
            ("a/b", "a"),
            ("a", "a/b"),
        ];
        for (f, t) in yes {
            assert!(matches(f, t), "{f} should match {t}");
        }
        for (f, t) in no {
            assert!(!matches(f, t), "{f} should not match {t}");
        }
    }

    /// Independent recursive formulation of the matching rules, used as an
    /// oracle for the iterative implementation.
    fn oracle(filter: &str, topic: &str) -> bool {
        fn go(f: &[&str], t: &[&str]) -> bool {
            match f.first() {
                None => t.is_empty(),
                Some(&"#") => true,
                Some(&"+") => !t.is_empty() && go(&f[1..], &t[1..]),
                Some(level) => t.first() == Some(level) && go(&f[1..], &t[1..]),
            }
        }
        if topic.starts_with('$') && (filter.starts_with('+') || filter.starts_with('#')) {
            return false;
        }
        go(
            &filter.split('/').collect::<Vec<_>>(),
            &topic.split('/').collect::<Vec<_>>(),
        )
    }

    fn level() -> impl Strategy<Value = String> {
        prop_oneof![Just("+".to_string()), "[a-c$]{0,2}"]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn agrees_with_recursive_oracle(
            filter_levels in proptest::collection::vec(level(), 1..5),
            hash_tail in proptest::bool::ANY,
            topic_levels in proptest::collection::vec("[a-c$]{0,2}", 1..5),
        ) {
            let mut filter = filter_levels.join("/");
            if hash_tail {
                if filter.is_empty() {
                    filter.push('#');
                } else {
                    filter.push_str("/#");
                }
            }
            let topic = topic_levels.join("/");
            prop_assert_eq!(
                matches(&filter, &topic),
                oracle(&filter, &topic),
                "filter={} topic={}", filter, topic
            );
        }
    }
}
