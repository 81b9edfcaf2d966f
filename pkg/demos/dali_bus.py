"""DALI forward frames, the logarithmic dimming curve and a TCP gateway round trip."""
from ils.dali import (DaliBus, Dapc, Gateway, GatewayClient, GearState, Short, decode_frame,
                      encode_frame, format_log, level_to_flux, parse_log, replay)

for level in (0, 1, 85, 170, 254):
    f = encode_frame(Short(3), Dapc(level))
    print(f"DAPC {level:3d} to short 3 -> frame 0x{f:04x}  {100 * level_to_flux(level):8.4f}% flux  "
          f"decodes to {decode_frame(f)}")

bus = DaliBus(GearState(k) for k in range(8))
gw = Gateway(bus).start()
try:
    with GatewayClient(*gw.address) as client:
        client.dapc(3, 0)
        client.dapc(4, 128)
        print("queried levels:", [client.query(a) for a in range(8)])
finally:
    gw.stop()

log = format_log(bus.log)
print(log, end="")
print("replay reproduces the bus state:", replay(bus.initial, parse_log(log)) == bus.state)
