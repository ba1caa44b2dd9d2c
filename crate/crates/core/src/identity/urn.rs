//! The `urn:lcmsec:<group>:<channel>:<id>` permission grammar.

use std::fmt;
use std::str::FromStr;

use super::IdentityError;

pub const URN_PREFIX: &str = "urn:lcmsec:";

/// Channel component that matches every non-empty channel of the group.
pub const WILDCARD_CHANNEL: &str = "*";

/// Longest channelname in bytes, excluding the NUL terminator.
pub const MAX_CHANNEL_LEN: usize = 255;

/// A secured topic: multicast group plus channelname.
///
/// The empty channelname denotes the group itself, the scope of the
/// group-level key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LcmDomain {
    group: String,
    channel: String,
}

impl LcmDomain {
    pub fn new(group: impl Into<String>, channel: impl Into<String>) -> Result<Self, IdentityError> {
        let (group, channel) = (group.into(), channel.into());
        validate_group(&group)?;
        validate_channel(&channel)?;
        if channel == WILDCARD_CHANNEL {
            return Err(IdentityError::MalformedUrn("wildcard is not a concrete channel".into()));
        }
        Ok(LcmDomain { group, channel })
    }

    /// The group-level scope of `group`.
    pub fn group_scope(group: impl Into<String>) -> Result<Self, IdentityError> {
        Self::new(group, "")
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn is_group_scope(&self) -> bool {
        self.channel.is_empty()
    }
}

impl fmt::Display for LcmDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.group, self.channel)
    }
}

/// A parsed SAN URN.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainUrn {
    group: String,
    channel: String,
    id: u16,
}

impl DomainUrn {
    pub fn new(group: impl Into<String>, channel: impl Into<String>, id: u16) -> Result<Self, IdentityError> {
        let (group, channel) = (group.into(), channel.into());
        validate_group(&group)?;
        validate_channel(&channel)?;
        Ok(DomainUrn { group, channel, id })
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn is_wildcard(&self) -> bool {
        self.channel == WILDCARD_CHANNEL
    }

    /// Key of the issuance-log id space this URN draws from.
    pub fn domain_key(&self) -> String {
        format!("{}:{}", self.group, self.channel)
    }

    /// Whether this URN grants access to `domain`. The wildcard covers
    /// channels, never the group scope.
    pub fn covers(&self, domain: &LcmDomain) -> bool {
        self.group == domain.group
            && (self.channel == domain.channel || (self.is_wildcard() && !domain.is_group_scope()))
    }
}

impl fmt::Display for DomainUrn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{URN_PREFIX}{}:{}:{}", self.group, self.channel, self.id)
    }
}

impl FromStr for DomainUrn {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_san_urn(s)
    }
}

/// A URN whose id the CA may assign (`<id>` = `auto`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrnRequest {
    pub group: String,
    pub channel: String,
    pub id: Option<u16>,
}

impl FromStr for UrnRequest {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (group, channel, id) = split(s)?;
        let id = if id == "auto" { None } else { Some(parse_id(id)?) };
        validate_group(group)?;
        validate_channel(channel)?;
        Ok(UrnRequest { group: group.to_string(), channel: channel.to_string(), id })
    }
}

pub fn parse_san_urn(s: &str) -> Result<DomainUrn, IdentityError> {
    let (group, channel, id) = split(s)?;
    DomainUrn::new(group, channel, parse_id(id)?)
}

fn malformed(msg: impl Into<String>) -> IdentityError {
    IdentityError::MalformedUrn(msg.into())
}

fn split(s: &str) -> Result<(&str, &str, &str), IdentityError> {
    let rest = s.strip_prefix(URN_PREFIX).ok_or_else(|| malformed(format!("{s:?} lacks prefix {URN_PREFIX:?}")))?;
    let (rest, id) = rest.rsplit_once(':').ok_or_else(|| malformed(format!("{s:?} has no id component")))?;
    let (group, channel) =
        rest.rsplit_once(':').ok_or_else(|| malformed(format!("{s:?} has no channel component")))?;
    Ok((group, channel, id))
}

fn parse_id(id: &str) -> Result<u16, IdentityError> {
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!("id {id:?} is not a decimal integer")));
    }
    id.parse::<u16>().map_err(|_| malformed(format!("id {id} exceeds 65535")))
}

fn validate_group(group: &str) -> Result<(), IdentityError> {
    if group.is_empty() || !group.is_ascii() || group.bytes().any(|b| b.is_ascii_whitespace() || b == 0) {
        return Err(malformed(format!("group {group:?} is empty or not printable ASCII")));
    }
    Ok(())
}

fn validate_channel(channel: &str) -> Result<(), IdentityError> {
    if channel.len() > MAX_CHANNEL_LEN {
        return Err(malformed(format!("channel longer than {MAX_CHANNEL_LEN} bytes")));
    }
    if !channel.is_ascii() || channel.bytes().any(|b| b == 0 || b == b':' || b.is_ascii_whitespace()) {
        return Err(malformed(format!("channel {channel:?} must be ASCII without NUL, ':' or whitespace")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_group_with_port() {
        let u = parse_san_urn("urn:lcmsec:239.255.76.67:7667:chatter:5").unwrap();
        assert_eq!((u.group(), u.channel(), u.id()), ("239.255.76.67:7667", "chatter", 5));
        assert_eq!(u.to_string(), "urn:lcmsec:239.255.76.67:7667:chatter:5");
    }

    #[test]
    fn rejects_bad_input() {
        for s in [
            "urn:lcmsec:g:c:65536",
            "urn:other:g:c:1",
            "urn:lcmsec:g:c:",
            "urn:lcmsec:g:c:-1",
            "urn:lcmsec:g:c:+1",
            "urn:lcmsec:c:1",
            "urn:lcmsec::c:1",
            "urn:lcmsec:g:ch\u{e9}:1",
            "urn:lcmsec:g:a b:1",
        ] {
            assert!(matches!(parse_san_urn(s), Err(IdentityError::MalformedUrn(_))), "{s}");
        }
    }

    #[test]
    fn empty_channel_is_group_scope() {
        let u = parse_san_urn("urn:lcmsec:239.255.76.67:7667::3").unwrap();
        let g = LcmDomain::group_scope("239.255.76.67:7667").unwrap();
        assert!(u.covers(&g));
        assert!(!u.covers(&LcmDomain::new("239.255.76.67:7667", "chatter").unwrap()));
    }

    #[test]
    fn wildcard_covers_channels_only() {
        let u = parse_san_urn("urn:lcmsec:g:*:3").unwrap();
        assert!(u.covers(&LcmDomain::new("g", "anything").unwrap()));
        assert!(!u.covers(&LcmDomain::group_scope("g").unwrap()));
        assert!(!u.covers(&LcmDomain::new("h", "anything").unwrap()));
    }

    #[test]
    fn auto_requests() {
        let r: UrnRequest = "urn:lcmsec:239.255.76.67:7667:chatter:auto".parse().unwrap();
        assert_eq!(r.id, None);
        let r: UrnRequest = "urn:lcmsec:g:c:9".parse().unwrap();
        assert_eq!(r.id, Some(9));
        assert!("urn:lcmsec:g:c:automatic".parse::<UrnRequest>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(group in "[0-9a-z.]{1,12}(:[0-9]{1,5})?", channel in "[A-Za-z0-9_./*-]{0,40}", id in any::<u16>()) {
            let u = DomainUrn::new(group, channel, id).unwrap();
            prop_assert_eq!(parse_san_urn(&u.to_string()).unwrap(), u);
        }
    }
}
